"""Piecewise-planar synthetic scenes with known groundtruth, plus corruption
and sparsification used to exercise the solver."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import EPS_FACE, Intrinsics, SlantedPlane, normals_from_slopes
from .solver import ConfigError, hash_keys


class SceneError(ConfigError):
    pass


@dataclass(frozen=True)
class Region:
    """Axis-aligned pixel rectangle ``[u0, u1) x [v0, v1)`` carrying one plane."""

    rect: tuple[int, int, int, int]
    plane: SlantedPlane
    color: tuple[float, float, float]


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    regions: tuple[Region, ...]
    intrinsics: Intrinsics
    texture_amplitude: float = 10.0
    texture_seed: int = 0


def four_plane_spec(width: int = 200, height: Optional[int] = None) -> SceneSpec:
    """Default scene: four quadrants, each on its own slanted plane and with its own color."""
    height = width if height is None else height
    hw, hh = width // 2, height // 2
    K = Intrinsics(fx=float(width), fy=float(width), cx=width / 2.0, cy=height / 2.0)
    regions = (
        Region((0, 0, hw, hh), SlantedPlane(0.5, 0.0, 2.0), (200.0, 60.0, 60.0)),
        Region((hw, 0, width, hh), SlantedPlane(-0.4, 0.3, 2.5), (60.0, 200.0, 60.0)),
        Region((0, hh, hw, height), SlantedPlane(0.0, -0.5, 3.0), (60.0, 60.0, 200.0)),
        Region((hw, hh, width, height), SlantedPlane(0.2, 0.6, 2.2), (200.0, 200.0, 60.0)),
    )
    return SceneSpec(width, height, regions, K)


def single_plane_spec(width: int = 64, height: int = 64, plane: SlantedPlane = SlantedPlane(0.3, -0.2, 2.0),
                      color=(128.0, 128.0, 128.0), texture_amplitude: float = 10.0) -> SceneSpec:
    K = Intrinsics(fx=float(width), fy=float(width), cx=width / 2.0, cy=height / 2.0)
    return SceneSpec(width, height, (Region((0, 0, width, height), plane, tuple(color)),), K,
                     texture_amplitude=texture_amplitude)


@dataclass
class GroundTruthScene:
    depth: np.ndarray
    normal: np.ndarray
    image: np.ndarray
    region_id: np.ndarray
    intrinsics: Intrinsics
    spec: Optional[SceneSpec] = field(default=None, repr=False)


def _check_tiling(spec: SceneSpec) -> np.ndarray:
    cover = np.zeros((spec.height, spec.width), dtype=np.int64)
    for u0, v0, u1, v1 in (r.rect for r in spec.regions):
        if not (0 <= u0 < u1 <= spec.width and 0 <= v0 < v1 <= spec.height):
            raise SceneError(f"region rect {(u0, v0, u1, v1)} is empty or outside the image")
        cover[v0:v1, u0:u1] += 1
    if np.any(cover != 1):
        raise SceneError("region rects must tile the image without gaps or overlaps")
    return cover


def texture(width: int, height: int, amplitude: float, seed: int = 0) -> np.ndarray:
    """Deterministic per-pixel RGB jitter uniform in ``[-amplitude, amplitude]``."""
    idx = np.arange(width * height, dtype=np.uint64)[:, None]
    h = hash_keys(seed, idx, np.arange(3, dtype=np.uint64)[None, :])
    unit = (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)
    return ((2.0 * unit - 1.0) * amplitude).reshape(height, width, 3)


def gen_planar_scene(spec: SceneSpec) -> GroundTruthScene:
    _check_tiling(spec)
    K = spec.intrinsics
    un, vn = K.normalized_grid(spec.width, spec.height)
    depth = np.zeros((spec.height, spec.width))
    normal = np.zeros((spec.height, spec.width, 3))
    image = np.zeros((spec.height, spec.width, 3))
    region_id = np.zeros((spec.height, spec.width), dtype=np.int32)
    for rid, reg in enumerate(spec.regions):
        u0, v0, u1, v1 = reg.rect
        pl = reg.plane
        den = 1.0 - pl.a * un[v0:v1, u0:u1] - pl.b * vn[v0:v1, u0:u1]
        with np.errstate(divide="ignore", invalid="ignore"):
            z = pl.t / den
        if np.any(np.abs(den) < 1e-9) or not np.all(np.isfinite(z)) or np.any(z <= 0):
            raise SceneError(f"plane of region {rid} is behind the camera or parallel to a pixel ray")
        depth[v0:v1, u0:u1] = z
        normal[v0:v1, u0:u1] = normals_from_slopes(np.array(pl.a), np.array(pl.b))
        image[v0:v1, u0:u1] = np.asarray(reg.color, dtype=np.float64)
        region_id[v0:v1, u0:u1] = rid
    if spec.texture_amplitude > 0:
        image = image + texture(spec.width, spec.height, spec.texture_amplitude, spec.texture_seed)
    # whole intensity levels so the image survives an 8-bit PNG round trip
    image = np.clip(np.round(image), 0.0, 255.0)
    return GroundTruthScene(depth, normal, image, region_id, K, spec)


@dataclass(frozen=True)
class CorruptionSpec:
    """Random substitution of per-pixel geometry.

    ``depth_noise_range=None`` uses ``[0.25 * min depth, 2 * max depth]`` of the scene.
    """

    p_noise: float = 0.95
    depth_noise_range: Optional[tuple[float, float]] = None
    seed: int = 0
    confidence_clean: float = 1.0
    confidence_noisy: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p_noise <= 1.0:
            raise ConfigError("p_noise must lie in [0, 1]")
        if self.depth_noise_range is not None:
            lo, hi = self.depth_noise_range
            if not 0 < lo <= hi:
                raise ConfigError("depth_noise_range needs 0 < lo <= hi")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


def random_facing_normals(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit normals uniform over the camera-facing hemisphere, with ``n_z <= -EPS_FACE``."""
    nz = -(EPS_FACE + (1.0 - EPS_FACE) * rng.random(shape))
    phi = 2.0 * np.pi * rng.random(shape)
    r = np.sqrt(1.0 - nz * nz)
    return np.stack([r * np.cos(phi), r * np.sin(phi), nz], axis=-1)


def corrupt(scene: GroundTruthScene, c: CorruptionSpec = CorruptionSpec()):
    """Replace each pixel's geometry by noise with probability ``c.p_noise``.

    Returns ``(depth, normal, conf_d, conf_n)``.
    """
    shape = scene.depth.shape
    rng = _rng(c.seed)
    noisy = rng.random(shape) < c.p_noise
    lo, hi = c.depth_noise_range or (0.25 * float(scene.depth.min()), 2.0 * float(scene.depth.max()))
    noise_depth = rng.uniform(lo, hi, shape)
    noise_normal = random_facing_normals(rng, shape)
    depth = np.where(noisy, noise_depth, scene.depth)
    normal = np.where(noisy[..., None], noise_normal, scene.normal)
    conf = np.where(noisy, c.confidence_noisy, c.confidence_clean)
    return depth, normal, conf, conf.copy()


def sparsify(scene: GroundTruthScene, keep_fraction: float, seed: int = 0):
    """Keep a random subset of pixels; returns ``(depth, conf_d)`` with 0.0 at dropped pixels."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ConfigError("keep_fraction must lie in (0, 1]")
    keep = _rng(seed).random(scene.depth.shape) < keep_fraction
    depth = np.where(keep, scene.depth, 0.0)
    return depth, keep.astype(np.float64)


def sparse_normals(scene: GroundTruthScene, conf_d: np.ndarray) -> np.ndarray:
    """Groundtruth normals at kept pixels and fronto-parallel ones elsewhere."""
    fronto = np.broadcast_to(np.array([0.0, 0.0, -1.0]), scene.normal.shape)
    return np.where((conf_d > 0)[..., None], scene.normal, fronto)
