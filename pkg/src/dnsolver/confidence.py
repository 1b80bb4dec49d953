"""Confidence maps: groundtruth-error based, cross-view geometric, and hybrid."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Intrinsics, Pose, ShapeError, check_depth, same_shape
from .solver import ConfigError


@dataclass(frozen=True)
class ConfidenceConfig:
    """``gamma2`` multiplies angles in radians."""

    gamma1: float = 5.0
    gamma2: float = 5.0
    gamma_geo: float = 5.0
    oob_value: float = 1.0

    def __post_init__(self):
        if not (self.gamma1 > 0 and self.gamma2 > 0 and self.gamma_geo > 0):
            raise ConfigError("confidence scales must be positive")
        if not 0.0 <= self.oob_value <= 1.0:
            raise ConfigError("oob_value must lie in [0, 1]")


@dataclass(frozen=True)
class View:
    depth: np.ndarray
    pose: Pose
    intrinsics: Intrinsics

    def __post_init__(self):
        object.__setattr__(self, "depth", check_depth(self.depth))


def _error_to_confidence(err: np.ndarray, gamma: float) -> np.ndarray:
    return np.maximum(1.0 - gamma * err, 0.0)


def gt_depth_confidence(pred, gt, cfg: ConfidenceConfig = ConfidenceConfig()) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    same_shape(pred, gt)
    valid = np.isfinite(gt) & (gt > 0)
    safe = np.where(valid, gt, 1.0)
    conf = _error_to_confidence(np.abs(pred - safe) / safe, cfg.gamma1)
    return np.where(valid & np.isfinite(conf), conf, 0.0)


def angle_between(n1: np.ndarray, n2: np.ndarray) -> np.ndarray:
    """Per-pixel angle in radians between two unit normal maps."""
    return np.arccos(np.clip(np.einsum("...c,...c->...", n1, n2), -1.0, 1.0))


def gt_normal_confidence(pred, gt, cfg: ConfidenceConfig = ConfidenceConfig()) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"normal map shapes disagree: {pred.shape} vs {gt.shape}")
    return _error_to_confidence(angle_between(pred, gt), cfg.gamma2)


def _view_confidence(target: View, ref: View, cfg: ConfidenceConfig) -> np.ndarray:
    h, w = target.depth.shape
    K = target.intrinsics
    un, vn = K.normalized_grid(w, h)
    d = target.depth
    pts = np.stack([un * d, vn * d, d], axis=-1)
    rel = ref.pose.inverse().compose(target.pose)
    pr = rel.apply(pts)
    z = pr[..., 2]
    Kr = ref.intrinsics
    rh, rw = ref.depth.shape
    in_front = z > 0
    zs = np.where(in_front, z, 1.0)
    # nearest pixel center, halves rounded up
    ur = np.floor(Kr.fx * pr[..., 0] / zs + Kr.cx + 0.5)
    vr = np.floor(Kr.fy * pr[..., 1] / zs + Kr.cy + 0.5)
    inside = in_front & np.isfinite(ur) & np.isfinite(vr) & (ur >= 0) & (ur < rw) & (vr >= 0) & (vr < rh)
    ui = np.where(inside, ur, 0).astype(np.int64)
    vi = np.where(inside, vr, 0).astype(np.int64)
    d_ref = ref.depth[vi, ui]
    usable = inside & (d_ref > 0)
    safe = np.where(usable, d_ref, 1.0)
    conf = _error_to_confidence(np.abs(z - safe) / safe, cfg.gamma_geo)
    return np.where(usable, conf, cfg.oob_value)


def geometric_confidence(target: View, refs: Sequence[View], cfg: ConfidenceConfig = ConfidenceConfig()) -> np.ndarray:
    """Strict cross-view consistency confidence of ``target``.

    Each valid target pixel is reprojected into every reference view and its
    depth compared with the nearest reference sample; the per-view
    confidences are combined by taking the minimum. Samples that leave a
    reference view or hit a missing reference depth count as
    ``cfg.oob_value`` for that view. Pixels with missing target depth get 0.
    """
    if len(refs) == 0:
        raise ConfigError("geometric confidence needs at least one reference view")
    conf = np.ones_like(target.depth)
    for ref in refs:
        conf = np.minimum(conf, _view_confidence(target, ref, cfg))
    return np.where(target.depth > 0, conf, 0.0)


def hybrid_confidence(deep, geometric) -> np.ndarray:
    deep = np.asarray(deep, dtype=np.float64)
    geometric = np.asarray(geometric, dtype=np.float64)
    same_shape(deep, geometric)
    return deep * geometric
