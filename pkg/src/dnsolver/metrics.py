"""Depth and normal error metrics.

Depth: Abs Rel, Abs Diff, Sq Rel, RMSE, RMSE log and the delta < 1.25^k
inlier ratios, over pixels with positive groundtruth. Normals: mean and
median angular error in degrees and the fraction of pixels within 11.25,
22.5 and 30 degrees. Sums use ``math.fsum`` so results do not depend on
pixel order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .confidence import angle_between
from .core import ShapeError


class EmptyMaskError(ValueError):
    pass


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    abs_diff: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta_1: float
    delta_2: float
    delta_3: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class NormalMetrics:
    mean_deg: float
    median_deg: float
    within_11_25: float
    within_22_5: float
    within_30: float

    def to_dict(self) -> dict:
        return asdict(self)


def _mean(x: np.ndarray) -> float:
    return math.fsum(x.tolist()) / x.size


def _fraction(flags: np.ndarray) -> float:
    return int(np.count_nonzero(flags)) / flags.size


def depth_metrics(pred, gt, mask: Optional[np.ndarray] = None) -> DepthMetrics:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred and gt shapes disagree: {pred.shape} vs {gt.shape}")
    valid = np.isfinite(gt) & (gt > 0)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    if not valid.any():
        raise EmptyMaskError("no valid pixels to evaluate")
    p, g = pred[valid], gt[valid]
    diff = p - g
    with np.errstate(divide="ignore", invalid="ignore"):
        log_diff = np.log(p) - np.log(g)
        ratio = np.maximum(p / g, g / p)
    return DepthMetrics(
        abs_rel=_mean(np.abs(diff) / g),
        abs_diff=_mean(np.abs(diff)),
        sq_rel=_mean(diff * diff / g),
        rmse=math.sqrt(_mean(diff * diff)),
        rmse_log=math.sqrt(_mean(log_diff * log_diff)),
        delta_1=_fraction(ratio < 1.25),
        delta_2=_fraction(ratio < 1.25 ** 2),
        delta_3=_fraction(ratio < 1.25 ** 3),
    )


def normal_metrics(pred, gt, mask: Optional[np.ndarray] = None) -> NormalMetrics:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred and gt shapes disagree: {pred.shape} vs {gt.shape}")
    ang = np.degrees(angle_between(pred, gt))
    if mask is not None:
        ang = ang[np.asarray(mask, dtype=bool)]
    ang = ang.ravel()
    if ang.size == 0:
        raise EmptyMaskError("no valid pixels to evaluate")
    ordered = np.sort(ang)
    return NormalMetrics(
        mean_deg=_mean(ang),
        median_deg=float(ordered[(ordered.size - 1) // 2]),
        within_11_25=_fraction(ang < 11.25),
        within_22_5=_fraction(ang < 22.5),
        within_30=_fraction(ang < 30.0),
    )
