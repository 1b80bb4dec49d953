"""Camera geometry, grid validation and the slope parameterization of normals.

Conventions: pinhole camera without distortion, +z forward, image origin at
the top-left corner with x to the right and y down. Integer pixel
coordinates refer to pixel centers. Grids are numpy arrays, ``(H, W)`` for
scalar maps and ``(H, W, 3)`` for normal maps and color images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS_FACE = 1e-3
CLIP_AB = 20.0


class GeometryError(ValueError):
    """Base class for invalid geometric input."""


class InvalidDepthError(GeometryError):
    pass


class OrientationError(GeometryError):
    """Raised for normals that do not face the camera."""


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def normalized_grid(self, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
        """Normalized coordinates of every pixel center as two ``(H, W)`` arrays."""
        u = (np.arange(width, dtype=np.float64) - self.cx) / self.fx
        v = (np.arange(height, dtype=np.float64) - self.cy) / self.fy
        uu, vv = np.meshgrid(u, v)
        return uu, vv


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if r.shape != (3, 3) or t.shape != (3,):
            raise GeometryError("pose needs a 3x3 rotation and a 3-vector translation")
        if not np.allclose(r.T @ r, np.eye(3), rtol=0.0, atol=1e-9):
            raise GeometryError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise GeometryError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> Pose:
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise GeometryError(f"expected a 4x4 matrix, got shape {m.shape}")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], rtol=0.0, atol=1e-9):
            raise GeometryError(f"bottom row must be 0 0 0 1, got {m[3].tolist()}")
        return cls(m[:3, :3].copy(), m[:3, 3].copy())

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> Pose:
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: Pose) -> Pose:
        """``self * other``: apply ``other`` first, then ``self``."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape ``(..., 3)``."""
        return points @ self.rotation.T + self.translation


@dataclass(frozen=True)
class Point3:
    p: float
    q: float
    z: float


@dataclass(frozen=True)
class ParamNormal:
    """Surface normal written as ``(a, b, -1)`` up to scale."""

    a: float
    b: float

    def clipped(self, limit: float = CLIP_AB) -> ParamNormal:
        return ParamNormal(float(np.clip(self.a, -limit, limit)), float(np.clip(self.b, -limit, limit)))


@dataclass(frozen=True)
class SlantedPlane:
    """Plane ``z = a*p + b*q + t`` in the camera frame."""

    a: float
    b: float
    t: float

    def depth_at(self, u_n: float, v_n: float) -> float:
        """Depth where the ray through normalized coords ``(u_n, v_n)`` meets the plane."""
        return self.t / (1.0 - self.a * u_n - self.b * v_n)

    def residual(self, point: Point3) -> float:
        return self.a * point.p + self.b * point.q + self.t - point.z


def normalized_coords(K: Intrinsics, x) -> tuple[float, float]:
    u, v = x
    return (u - K.cx) / K.fx, (v - K.cy) / K.fy


def unproject(K: Intrinsics, x, d: float) -> Point3:
    if not (np.isfinite(d) and d > 0):
        raise InvalidDepthError(f"depth must be finite and positive, got {d}")
    un, vn = normalized_coords(K, x)
    return Point3(un * d, vn * d, float(d))


def project(K: Intrinsics, point) -> tuple[float, float]:
    p, q, z = (point.p, point.q, point.z) if isinstance(point, Point3) else point
    return K.fx * p / z + K.cx, K.fy * q / z + K.cy


def plane_from(K: Intrinsics, x, d: float, n: ParamNormal) -> SlantedPlane:
    """Plane through the back-projection of pixel ``x`` at depth ``d`` with slopes ``n``."""
    if not (np.isfinite(d) and d > 0):
        raise InvalidDepthError(f"depth must be finite and positive, got {d}")
    un, vn = normalized_coords(K, x)
    return SlantedPlane(n.a, n.b, (1.0 - n.a * un - n.b * vn) * d)


def param_from_unit(n) -> ParamNormal:
    nx, ny, nz = (float(c) for c in n)
    if not nz < -EPS_FACE:
        raise OrientationError(f"normal {n!r} does not face the camera")
    return ParamNormal(-nx / nz, -ny / nz)


def unit_from_param(n: ParamNormal) -> np.ndarray:
    s = np.sqrt(n.a * n.a + n.b * n.b + 1.0)
    return np.array([n.a / s, n.b / s, -1.0 / s])


# Vectorized forms used by the solver and the grid helpers.

def slopes_from_normals(normals: np.ndarray, eps: float = EPS_FACE) -> tuple[np.ndarray, np.ndarray]:
    nz = normals[..., 2]
    if np.any(~(nz < -eps)):
        raise OrientationError("normal map contains normals that do not face the camera")
    return -normals[..., 0] / nz, -normals[..., 1] / nz


def normals_from_slopes(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    s = np.sqrt(a * a + b * b + 1.0)
    return np.stack([a / s, b / s, -1.0 / s], axis=-1)


def check_depth(depth, name: str = "depth") -> np.ndarray:
    """Validate a depth grid; 0.0 marks missing pixels."""
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D grid, got shape {d.shape}")
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise InvalidDepthError(f"{name} must be finite and non-negative (0 marks missing)")
    return d


def check_confidence(conf, name: str = "confidence") -> np.ndarray:
    c = np.asarray(conf, dtype=np.float64)
    if c.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D grid, got shape {c.shape}")
    if not np.all((c >= 0) & (c <= 1)):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return c


def check_normals(normals, name: str = "normal", tol: float = 1e-6) -> np.ndarray:
    n = np.asarray(normals, dtype=np.float64)
    if n.ndim != 3 or n.shape[2] != 3:
        raise ShapeError(f"{name} must have shape (H, W, 3), got {n.shape}")
    if np.any(np.abs(np.linalg.norm(n, axis=-1) - 1.0) > tol):
        raise GeometryError(f"{name} contains non-unit vectors")
    if np.any(~(n[..., 2] < 0)):
        raise OrientationError(f"{name} contains normals that do not face the camera")
    return n


def check_image(image, name: str = "image") -> np.ndarray:
    im = np.asarray(image, dtype=np.float64)
    if im.ndim != 3 or im.shape[2] != 3:
        raise ShapeError(f"{name} must have shape (H, W, 3), got {im.shape}")
    if not np.all(np.isfinite(im)) or np.any(im < 0) or np.any(im > 255):
        raise ValueError(f"{name} channels must lie in [0, 255]")
    return im


def same_shape(*grids) -> tuple[int, int]:
    shapes = {g.shape[:2] for g in grids}
    if len(shapes) != 1:
        raise ShapeError(f"grid shapes disagree: {sorted(shapes)}")
    return shapes.pop()
