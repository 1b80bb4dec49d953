"""Iterative depth-normal solver.

Each iteration runs a D-step (closed-form depth update by propagating the
slanted planes of neighboring pixels) followed by an N-step (closed-form
slope update by confidence-weighted local plane fitting). Both steps are
Jacobi updates: every pixel reads only the grids produced by the previous
step, so the result does not depend on how pixels are split across threads.

All arithmetic is done in float64 on flattened ``H*W`` arrays. Neighbor
contributions are accumulated in the fixed slot order of the neighborhood
pattern.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

from .core import (
    CLIP_AB,
    Intrinsics,
    InvalidDepthError,
    SlantedPlane,
    ShapeError,
    check_confidence,
    check_depth,
    check_image,
    check_normals,
    normalized_coords,
    normals_from_slopes,
    same_shape,
    slopes_from_normals,
)

CHECKERBOARD_OFFSETS = tuple(
    [(s * k, 0) for k in (1, 3, 5, 10) for s in (1, -1)]
    + [(0, s * k) for k in (1, 3, 5, 10) for s in (1, -1)]
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NeighborhoodPattern:
    """Which pixels feed a pixel's update.

    ``checkerboard`` uses the fixed ``offsets`` (``(du, dv)`` pairs). ``random``
    picks ``sample_count`` distinct pixels inside a ``(2r+1)^2`` window around
    each pixel; the choice is a pure function of ``(seed, pixel index)``.
    """

    kind: str = "checkerboard"
    offsets: tuple = CHECKERBOARD_OFFSETS
    window_radius: int = 5
    sample_count: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("checkerboard", "random"):
            raise ConfigError(f"unknown neighborhood kind {self.kind!r}")
        offsets = tuple((int(du), int(dv)) for du, dv in self.offsets)
        if (0, 0) in offsets:
            raise ConfigError("(0, 0) is not a valid neighbor offset")
        object.__setattr__(self, "offsets", offsets)
        if self.kind == "random" and (self.window_radius < 1 or self.sample_count < 1):
            raise ConfigError("random window needs window_radius >= 1 and sample_count >= 1")

    @classmethod
    def checkerboard(cls, offsets=CHECKERBOARD_OFFSETS) -> NeighborhoodPattern:
        return cls(kind="checkerboard", offsets=tuple(offsets))

    @classmethod
    def random_window(cls, window_radius: int = 5, sample_count: int = 16, seed: int = 0) -> NeighborhoodPattern:
        return cls(kind="random", window_radius=window_radius, sample_count=sample_count, seed=seed)

    @property
    def slots(self) -> int:
        return len(self.offsets) if self.kind == "checkerboard" else self.sample_count


@dataclass(frozen=True)
class SolverConfig:
    """Solver hyperparameters.

    ``confidence_update`` controls the structural confidences between
    iterations. With ``"fixed"`` the input maps are used unchanged in every
    iteration. With ``"propagate"`` (default) a pixel whose depth was
    re-estimated from its neighbors inherits ``confidence_decay`` times the
    support-weighted mean confidence of those neighbors, so later iterations
    can propagate from it; the data term always keeps the input confidences.
    Without this, zero-confidence pixels farther than one neighborhood from
    any trusted pixel are never reached.
    """

    alpha: float = 1.0
    sigma_x_sq: float = 2.5
    sigma_c_sq: float = 25.0
    iterations: int = 10
    clip_ab: float = CLIP_AB
    eps_den: float = 1e-6
    eps_sing: float = 1e-12
    confidence_mode: str = "separate"
    anchor_mode: str = "initial"
    confidence_update: str = "propagate"
    confidence_decay: float = 0.9
    min_isotropy: float = 0.1
    threads: int = 1

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ConfigError("alpha must be >= 0")
        if not (self.sigma_x_sq > 0 and self.sigma_c_sq > 0):
            raise ConfigError("bilateral variances must be positive")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ConfigError(f"iterations must be an integer >= 1, got {self.iterations}")
        if not self.clip_ab > 0:
            raise ConfigError("clip_ab must be positive")
        if self.confidence_mode not in ("unified", "separate"):
            raise ConfigError(f"unknown confidence_mode {self.confidence_mode!r}")
        if self.anchor_mode not in ("initial", "previous"):
            raise ConfigError(f"unknown anchor_mode {self.anchor_mode!r}")
        if self.confidence_update not in ("fixed", "propagate"):
            raise ConfigError(f"unknown confidence_update {self.confidence_update!r}")
        if not 0 < self.confidence_decay <= 1:
            raise ConfigError("confidence_decay must lie in (0, 1]")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


@dataclass
class SolverState:
    """Current iterate, data-term anchors and confidences of one view.

    In ``unified`` mode only ``conf_d`` is read, as the single confidence map.
    """

    depth: np.ndarray
    normal: np.ndarray
    anchor_depth: np.ndarray
    anchor_normal: np.ndarray
    conf_d: np.ndarray
    conf_n: np.ndarray
    image: np.ndarray
    intrinsics: Intrinsics

    def __post_init__(self):
        self.depth = check_depth(self.depth)
        self.anchor_depth = check_depth(self.anchor_depth, "anchor_depth")
        self.normal = check_normals(self.normal)
        self.anchor_normal = check_normals(self.anchor_normal, "anchor_normal")
        self.conf_d = check_confidence(self.conf_d, "conf_d")
        self.conf_n = check_confidence(self.conf_n, "conf_n")
        self.image = check_image(self.image)
        same_shape(self.depth, self.normal, self.anchor_depth, self.anchor_normal,
                   self.conf_d, self.conf_n, self.image)
        if np.any((self.conf_d > 0) & (self.anchor_depth <= 0)):
            raise InvalidDepthError("anchor depth must be positive wherever conf_d > 0")

    @classmethod
    def initial(cls, depth, normal, image, intrinsics, conf_d, conf_n=None) -> SolverState:
        """State whose iterate starts at the anchors."""
        conf_d = np.asarray(conf_d, dtype=np.float64)
        conf_n = conf_d if conf_n is None else conf_n
        return cls(depth, normal, depth, normal, conf_d, conf_n, image, intrinsics)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


# Pure-scalar operations.

def bilateral_weight(x_i, x_j, I_i, I_j, cfg: SolverConfig = SolverConfig()) -> float:
    dx = float(x_i[0]) - float(x_j[0])
    dy = float(x_i[1]) - float(x_j[1])
    dc = np.asarray(I_i, dtype=np.float64) - np.asarray(I_j, dtype=np.float64)
    return math.exp(-(dx * dx + dy * dy) / (2.0 * cfg.sigma_x_sq) - float(dc @ dc) / (2.0 * cfg.sigma_c_sq))


def propagate_depth(plane: SlantedPlane, x_i, K: Intrinsics, eps_den: float = 1e-6) -> Optional[float]:
    """Depth at pixel ``x_i`` of the ray-plane intersection, or None when ill-posed."""
    un, vn = normalized_coords(K, x_i)
    den = 1.0 - plane.a * un - plane.b * vn
    if abs(den) < eps_den:
        return None
    d = plane.t / den
    if not (math.isfinite(d) and d > 0):
        return None
    return d


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def hash_keys(seed: int, index: np.ndarray, stream: np.ndarray) -> np.ndarray:
    """Counter-based 64-bit hash of ``(seed, index, stream)``; broadcasts."""
    with np.errstate(over="ignore"):
        h = _splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _splitmix64(np.asarray(index, dtype=np.uint64)))
        return _splitmix64(h ^ (np.asarray(stream, dtype=np.uint64) * np.uint64(0xD1B54A32D192ED03)))


def _window_offsets(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    dv, du = np.meshgrid(r, r, indexing="ij")
    offs = np.stack([du.ravel(), dv.ravel()], axis=1)
    return offs[(offs[:, 0] != 0) | (offs[:, 1] != 0)]


def _random_choice(pattern: NeighborhoodPattern, us: np.ndarray, vs: np.ndarray, width: int, height: int):
    """Chosen window offsets for the given pixels: ``(K, n)`` du, dv and validity."""
    offs = _window_offsets(pattern.window_radius)
    pix = (vs * width + us).astype(np.uint64)
    keys = hash_keys(pattern.seed, pix[None, :], np.arange(len(offs), dtype=np.uint64)[:, None])
    tu = us[None, :] + offs[:, 0:1]
    tv = vs[None, :] + offs[:, 1:2]
    inside = (tu >= 0) & (tu < width) & (tv >= 0) & (tv < height)
    keys = np.where(inside, keys, np.uint64(0xFFFFFFFFFFFFFFFF))
    order = np.argsort(keys, axis=0, kind="stable")[: pattern.sample_count]
    valid = np.take_along_axis(inside, order, axis=0)
    du = offs[:, 0][order]
    dv = offs[:, 1][order]
    return du, dv, valid


def neighborhood(x, pattern: NeighborhoodPattern, width: int, height: int) -> list[tuple[int, int]]:
    """In-bounds neighbors of pixel ``x = (u, v)`` in slot order."""
    u, v = int(x[0]), int(x[1])
    if pattern.kind == "checkerboard":
        cand = [(u + du, v + dv) for du, dv in pattern.offsets]
        return [(a, b) for a, b in cand if 0 <= a < width and 0 <= b < height]
    du, dv, valid = _random_choice(pattern, np.array([u]), np.array([v]), width, height)
    return [(u + int(du[k, 0]), v + int(dv[k, 0])) for k in range(du.shape[0]) if valid[k, 0]]


class Neighbors(NamedTuple):
    """Flattened neighbor table: slot ``k`` of pixel ``i`` is pixel ``index[k, i]``."""

    index: np.ndarray
    valid: np.ndarray
    dist_sq: np.ndarray


def neighbor_table(pattern: NeighborhoodPattern, width: int, height: int, chunk: int = 8192) -> Neighbors:
    n = width * height
    flat = np.arange(n)
    us, vs = flat % width, flat // width
    if pattern.kind == "checkerboard":
        offs = np.array(pattern.offsets, dtype=np.int64).reshape(-1, 2)
        du = np.broadcast_to(offs[:, 0:1], (len(offs), n))
        dv = np.broadcast_to(offs[:, 1:2], (len(offs), n))
        tu, tv = us + du, vs + dv
        valid = (tu >= 0) & (tu < width) & (tv >= 0) & (tv < height)
    else:
        parts = [_random_choice(pattern, us[s:s + chunk], vs[s:s + chunk], width, height)
                 for s in range(0, n, chunk)]
        du = np.concatenate([p[0] for p in parts], axis=1)
        dv = np.concatenate([p[1] for p in parts], axis=1)
        valid = np.concatenate([p[2] for p in parts], axis=1)
        tu, tv = us + du, vs + dv
    index = np.where(valid, tv * width + tu, flat)
    dist_sq = (du * du + dv * dv).astype(np.float64)
    return Neighbors(index.astype(np.int64), valid, dist_sq)


def bilateral_table(nb: Neighbors, image: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    """Bilateral weights per slot, zero on invalid slots."""
    rgb = np.asarray(image, dtype=np.float64).reshape(-1, 3)
    diff = rgb[nb.index] - rgb[None, :, :]
    color_sq = np.einsum("kic,kic->ki", diff, diff)
    w = np.exp(-nb.dist_sq / (2.0 * cfg.sigma_x_sq) - color_sq / (2.0 * cfg.sigma_c_sq))
    return np.where(nb.valid, w, 0.0)


@dataclass
class _Context:
    """Per-view quantities that stay fixed over a solve."""

    un: np.ndarray
    vn: np.ndarray
    nb: Neighbors
    weight: np.ndarray
    cfg: SolverConfig

    @classmethod
    def build(cls, image, intrinsics: Intrinsics, pattern: NeighborhoodPattern, cfg: SolverConfig):
        h, w = image.shape[:2]
        uu, vv = intrinsics.normalized_grid(w, h)
        nb = neighbor_table(pattern, w, h)
        return cls(uu.ravel(), vv.ravel(), nb, bilateral_table(nb, image, cfg), cfg)

    @property
    def size(self) -> int:
        return self.un.shape[0]


# pixels per work item; small enough that a kernel's temporaries stay in cache
BLOCK = 16384


def _chunks(n: int, threads: int) -> list[slice]:
    step = min(-(-n // threads), BLOCK) if n else 1
    return [slice(s, min(s + step, n)) for s in range(0, n, step)] or [slice(0, 0)]


def _run(fn: Callable[[slice], tuple], n: int, threads: int) -> tuple:
    """Apply a per-pixel kernel over ``[0, n)`` in row-major chunks and stitch the outputs."""
    parts = _chunks(n, threads)
    if threads == 1 or len(parts) == 1:
        outs = [fn(s) for s in parts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(fn, parts))
    return tuple(np.concatenate(cols) for cols in zip(*outs))


def _propagated(ctx: _Context, k: int, sl: slice, d, a, b):
    """Depths propagated into pixels ``sl`` from their slot-``k`` neighbors, with a usable mask."""
    cfg = ctx.cfg
    j = ctx.nb.index[k, sl]
    dj = d[j]
    aj, bj = a[j], b[j]
    t = (1.0 - aj * ctx.un[j] - bj * ctx.vn[j]) * dj
    den = 1.0 - aj * ctx.un[sl] - bj * ctx.vn[sl]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        prop = t / den
    ok = ctx.nb.valid[k, sl] & (dj > 0) & (np.abs(den) >= cfg.eps_den) & np.isfinite(prop) & (prop > 0)
    return j, np.where(ok, prop, 0.0), ok


def _structural_d(ctx: _Context, conf_d, conf_n):
    """Per-pixel neighbor factor of the D-step weights."""
    return conf_d * conf_n if ctx.cfg.confidence_mode == "separate" else conf_d


def _d_kernel(ctx: _Context, d, a, b, anchor_d, data_conf, struct_d, struct_n, sl: slice):
    cfg = ctx.cfg
    struct = _structural_d(ctx, struct_d, struct_n)
    cdata = cfg.alpha * data_conf[sl]
    num = cdata * anchor_d[sl]
    den = cdata.copy()
    support = np.zeros_like(den)
    sup_d = np.zeros_like(den)
    sup_n = np.zeros_like(den)
    for k in range(ctx.nb.index.shape[0]):
        j, prop, ok = _propagated(ctx, k, sl, d, a, b)
        s = np.where(ok, struct[j] * ctx.weight[k, sl], 0.0)
        num = num + s * prop
        den = den + s
        support = support + s
        sup_d = sup_d + s * struct_d[j]
        sup_n = sup_n + s * struct_n[j]
    keep = den < 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(keep, d[sl], num / np.where(keep, 1.0, den))
    return out, support, sup_d, sup_n


class NormalSystem(NamedTuple):
    """Per-pixel 2x2 normal equations ``A (a, b)^T = B`` and their raw solution."""

    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    det: np.ndarray
    a: np.ndarray
    b: np.ndarray


def _n_kernel(ctx: _Context, d, anchor_a, anchor_b, data_conf, struct_d, sl: slice):
    cfg = ctx.cfg
    separate = cfg.confidence_mode == "separate"
    cdata = cfg.alpha * data_conf[sl]
    a11 = cdata.copy()
    a22 = cdata.copy()
    a12 = np.zeros_like(cdata)
    b1 = cdata * anchor_a[sl]
    b2 = cdata * anchor_b[sl]
    di = d[sl]
    pi, qi = ctx.un[sl] * di, ctx.vn[sl] * di
    self_ok = di > 0
    self_w = struct_d[sl] if separate else 1.0
    for k in range(ctx.nb.index.shape[0]):
        j = ctx.nb.index[k, sl]
        dj = d[j]
        ok = ctx.nb.valid[k, sl] & self_ok & (dj > 0)
        w = np.where(ok, self_w * struct_d[j] * ctx.weight[k, sl], 0.0)
        dp = ctx.un[j] * dj - pi
        dq = ctx.vn[j] * dj - qi
        dz = dj - di
        a11 = a11 + w * (dp * dp)
        a12 = a12 + w * (dp * dq)
        a22 = a22 + w * (dq * dq)
        b1 = b1 + w * (dp * dz)
        b2 = b2 + w * (dq * dz)
    det = a11 * a22 - a12 * a12
    with np.errstate(divide="ignore", invalid="ignore"):
        sa = (a22 * b1 - a12 * b2) / det
        sb = (a11 * b2 - a12 * b1) / det
    return a11, a12, a22, b1, b2, det, sa, sb


def _n_update(cfg: SolverConfig, system: NormalSystem, a, b):
    singular = ~(np.abs(system.det) >= cfg.eps_sing)
    na = np.where(singular, a, np.clip(np.where(singular, 0.0, system.a), -cfg.clip_ab, cfg.clip_ab))
    nb = np.where(singular, b, np.clip(np.where(singular, 0.0, system.b), -cfg.clip_ab, cfg.clip_ab))
    return na, nb


def _flat_state(state: SolverState):
    a, b = slopes_from_normals(state.normal)
    aa, ab = slopes_from_normals(state.anchor_normal)
    return (state.depth.ravel(), a.ravel(), b.ravel(), state.anchor_depth.ravel(),
            aa.ravel(), ab.ravel(), state.conf_d.ravel(), state.conf_n.ravel())


def d_step(state: SolverState, pattern: NeighborhoodPattern = NeighborhoodPattern(),
           cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """One closed-form depth update; returns the new ``(H, W)`` depth grid."""
    ctx = _Context.build(state.image, state.intrinsics, pattern, cfg)
    d, a, b, ad, _, _, cd, cn = _flat_state(state)
    data = cd
    out = _run(lambda sl: _d_kernel(ctx, d, a, b, ad, data, cd, cn, sl)[:1], ctx.size, cfg.threads)[0]
    return out.reshape(state.shape)


def normal_system(state: SolverState, pattern: NeighborhoodPattern = NeighborhoodPattern(),
                  cfg: SolverConfig = SolverConfig()) -> NormalSystem:
    """The N-step linear systems for every pixel, as ``(H, W)`` grids."""
    ctx = _Context.build(state.image, state.intrinsics, pattern, cfg)
    d, _, _, _, aa, ab, cd, cn = _flat_state(state)
    data = cn if cfg.confidence_mode == "separate" else cd
    cols = _run(lambda sl: _n_kernel(ctx, d, aa, ab, data, cd, sl), ctx.size, cfg.threads)
    return NormalSystem(*(c.reshape(state.shape) for c in cols))


def n_step(state: SolverState, pattern: NeighborhoodPattern = NeighborhoodPattern(),
           cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """One closed-form normal update; returns unit normals of shape ``(H, W, 3)``."""
    system = normal_system(state, pattern, cfg)
    a, b = slopes_from_normals(state.normal)
    na, nb = _n_update(cfg, system, a, b)
    return normals_from_slopes(na, nb)


@dataclass
class SolveResult:
    depth: np.ndarray
    normal: np.ndarray
    conf_d: np.ndarray = field(repr=False)
    conf_n: np.ndarray = field(repr=False)


def solve(depth, normal, image, intrinsics: Intrinsics, conf_d, conf_n=None,
          pattern: NeighborhoodPattern = NeighborhoodPattern(), cfg: SolverConfig = SolverConfig(),
          callback: Optional[Callable[[int, np.ndarray, np.ndarray], None]] = None) -> SolveResult:
    """Refine a depth/normal pair by ``cfg.iterations`` rounds of D-step then N-step.

    The iterate starts at the inputs. ``callback(it, depth, normal)`` is called
    after each iteration with 1-based ``it``. The returned ``conf_d``/``conf_n``
    are the structural confidences after the last iteration.
    """
    state = SolverState.initial(depth, normal, image, intrinsics, conf_d, conf_n)
    shape = state.shape
    ctx = _Context.build(state.image, intrinsics, pattern, cfg)
    d, a, b, ad, aa, ab, cd0, cn0 = _flat_state(state)
    separate = cfg.confidence_mode == "separate"
    data_n = cn0 if separate else cd0
    sd, sn = cd0, cn0
    n = ctx.size
    propagate = cfg.confidence_update == "propagate"

    for it in range(1, cfg.iterations + 1):
        if cfg.anchor_mode == "previous" and it > 1:
            ad, aa, ab = d, a, b
        d_new, support, sup_d, sup_n = _run(
            lambda sl: _d_kernel(ctx, d, a, b, ad, cd0, sd, sn, sl), n, cfg.threads)
        reached = support >= 1e-12
        gained = cfg.confidence_decay * _ratio(sup_d, support, reached)
        sd_next = _promote(sd, reached, gained) if propagate else sd
        system = NormalSystem(*_run(lambda sl: _n_kernel(ctx, d_new, aa, ab, data_n, sd_next, sl), n, cfg.threads))
        a, b = _n_update(cfg, system, a, b)
        d = d_new
        if propagate:
            fitted = _well_posed(cfg, system)
            if separate:
                sd = sd_next
                sn = _promote(sn, fitted & (sd > 0), cfg.confidence_decay * sd)
            else:
                # one map serves both roles, so it only grows once the normal is usable too
                sd = sn = _promote(sd, reached & fitted, gained)
        if callback is not None:
            callback(it, d.reshape(shape), normals_from_slopes(a, b).reshape(shape + (3,)))

    return SolveResult(d.reshape(shape), normals_from_slopes(a, b).reshape(shape + (3,)),
                       sd.reshape(shape), sn.reshape(shape))


def _ratio(num, den, mask):
    return np.where(mask, num / np.where(mask, den, 1.0), 0.0)


def _promote(conf, mask, value):
    """Raise ``conf`` to ``value`` where ``mask`` holds; confidences never drop."""
    return np.maximum(conf, np.where(mask, np.minimum(value, 1.0), 0.0))


def _well_posed(cfg: SolverConfig, system: NormalSystem) -> np.ndarray:
    """Non-singular N-step systems whose point spread is not close to a line.

    The isotropy ``4 det / trace^2`` is 1 for a circular spread of neighbors and
    0 when all of them are collinear in the image.
    """
    trace = system.a11 + system.a22
    with np.errstate(divide="ignore", invalid="ignore"):
        iso = 4.0 * system.det / (trace * trace)
    return (np.abs(system.det) >= cfg.eps_sing) & (iso >= cfg.min_isotropy)


def energy_d(state: SolverState, pattern: NeighborhoodPattern = NeighborhoodPattern(),
             cfg: SolverConfig = SolverConfig(), depth: Optional[np.ndarray] = None) -> float:
    """Depth energy with propagated depths taken from the state's current geometry.

    If ``depth`` is given the energy is evaluated at that depth map while the
    propagated depths stay frozen at the state's geometry.
    """
    ctx = _Context.build(state.image, state.intrinsics, pattern, cfg)
    d, a, b, ad, _, _, cd, cn = _flat_state(state)
    x = d if depth is None else np.asarray(depth, dtype=np.float64).ravel()
    struct = _structural_d(ctx, cd, cn)
    sl = slice(0, ctx.size)
    per_pixel = cfg.alpha * cd * (x - ad) ** 2
    for k in range(ctx.nb.index.shape[0]):
        j, prop, ok = _propagated(ctx, k, sl, d, a, b)
        s = np.where(ok, struct[j] * ctx.weight[k], 0.0)
        per_pixel = per_pixel + s * (x - prop) ** 2
    return float(math.fsum(per_pixel))


def energy_n(state: SolverState, pattern: NeighborhoodPattern = NeighborhoodPattern(),
             cfg: SolverConfig = SolverConfig()) -> float:
    """Normal energy using algebraic point-to-plane residuals and slope differences."""
    ctx = _Context.build(state.image, state.intrinsics, pattern, cfg)
    d, a, b, _, aa, ab, cd, cn = _flat_state(state)
    separate = cfg.confidence_mode == "separate"
    data = cn if separate else cd
    per_pixel = cfg.alpha * data * ((a - aa) ** 2 + (b - ab) ** 2)
    p, q = ctx.un * d, ctx.vn * d
    self_w = cd if separate else 1.0
    for k in range(ctx.nb.index.shape[0]):
        j = ctx.nb.index[k]
        ok = ctx.nb.valid[k] & (d > 0) & (d[j] > 0)
        w = np.where(ok, self_w * cd[j] * ctx.weight[k], 0.0)
        r = a * (p[j] - p) + b * (q[j] - q) - (d[j] - d)
        per_pixel = per_pixel + w * r * r
    return float(math.fsum(per_pixel))


def with_geometry(state: SolverState, depth=None, normal=None) -> SolverState:
    """Copy of ``state`` with a new iterate."""
    return replace(state,
                   depth=state.depth if depth is None else depth,
                   normal=state.normal if normal is None else normal)
