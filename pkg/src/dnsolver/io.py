"""File formats: PFM float maps, 16-bit PNG depth, camera text files,
scene/run configuration documents and PNG visualizations."""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from .core import Intrinsics, Pose, SlantedPlane, GeometryError, OrientationError
from .solver import ConfigError, NeighborhoodPattern, SolverConfig
from .confidence import ConfidenceConfig
from .synth import Region, SceneSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PathLike = Union[str, Path]


class FormatError(ValueError):
    pass


_PFM_HEADER = re.compile(rb"^(PF|Pf)\s+(\d+)\s+(\d+)\s+(\S+)\s")


def read_pfm(path: PathLike, normalize: bool = True) -> np.ndarray:
    """Read a PFM file into a top-left-origin float64 grid.

    ``Pf`` files give ``(H, W)`` grids, which must not contain NaN. ``PF``
    files are normal maps: with ``normalize`` every vector is scaled to unit
    length and must face the camera (negative z).
    """
    data = Path(path).read_bytes()
    m = _PFM_HEADER.match(data[:256])
    if m is None:
        raise FormatError(f"{path}: not a PFM file")
    tag, width, height = m.group(1), int(m.group(2)), int(m.group(3))
    try:
        scale = float(m.group(4))
    except ValueError:
        raise FormatError(f"{path}: bad scale line {m.group(4)!r}") from None
    if width <= 0 or height <= 0 or scale == 0:
        raise FormatError(f"{path}: bad dimensions or scale")
    channels = 3 if tag == b"PF" else 1
    count = width * height * channels
    body = data[m.end():]
    if len(body) < 4 * count:
        raise FormatError(f"{path}: truncated payload ({len(body)} of {4 * count} bytes)")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(body, dtype=dtype, count=count).astype(np.float64)
    shape = (height, width) if channels == 1 else (height, width, 3)
    grid = np.flipud(arr.reshape(shape)).copy()
    if channels == 1:
        if np.isnan(grid).any():
            raise FormatError(f"{path}: float map contains NaN")
        return grid
    if normalize:
        norm = np.linalg.norm(grid, axis=-1, keepdims=True)
        if np.any(~(norm > 0)):
            raise FormatError(f"{path}: normal map contains zero or invalid vectors")
        grid = grid / norm
        if np.any(~(grid[..., 2] < 0)):
            raise OrientationError(f"{path}: normal map contains normals that do not face the camera")
    return grid


def write_pfm(grid: np.ndarray, path: PathLike) -> None:
    """Write a ``(H, W)`` or ``(H, W, 3)`` grid as little-endian float32 PFM."""
    g = np.asarray(grid)
    if g.ndim == 2:
        tag = "Pf"
    elif g.ndim == 3 and g.shape[2] == 3:
        tag = "PF"
    else:
        raise FormatError(f"cannot write grid of shape {g.shape} as PFM")
    height, width = g.shape[:2]
    if height == 0 or width == 0:
        raise FormatError("cannot write an empty grid")
    payload = np.ascontiguousarray(np.flipud(g), dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(f"{tag}\n{width} {height}\n-1.0\n".encode("ascii"))
        f.write(payload)


def read_depth_png16(path: PathLike, scale_divisor: float = 1000.0) -> np.ndarray:
    """Depth in meters from a 16-bit single-channel PNG; raw 0 stays 0.0."""
    with Image.open(path) as im:
        if im.mode not in ("I;16", "I;16B", "I;16L", "I"):
            raise FormatError(f"{path}: expected a 16-bit single-channel PNG, got mode {im.mode}")
        raw = np.array(im)
    if raw.ndim != 2 or raw.min() < 0 or raw.max() > 65535:
        raise FormatError(f"{path}: expected 16-bit single-channel data")
    return raw.astype(np.float64) / float(scale_divisor)


def write_depth_png16(depth: np.ndarray, path: PathLike, scale_divisor: float = 1000.0) -> None:
    raw = np.clip(np.round(np.asarray(depth) * scale_divisor), 0, 65535).astype(np.uint16)
    Image.fromarray(raw).save(path)


def read_image(path: PathLike) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64)


def write_image(image: np.ndarray, path: PathLike) -> None:
    Image.fromarray(np.clip(np.round(image), 0, 255).astype(np.uint8), mode="RGB").save(path)


def _numbers(path: PathLike) -> list[float]:
    try:
        return [float(tok) for tok in Path(path).read_text().split()]
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None


def parse_intrinsics(path: PathLike) -> Intrinsics:
    """Intrinsics from a text file holding ``fx fy cx cy``."""
    vals = _numbers(path)
    if len(vals) != 4:
        raise FormatError(f"{path}: expected 4 numbers (fx fy cx cy), got {len(vals)}")
    return Intrinsics(*vals)


def write_intrinsics(K: Intrinsics, path: PathLike) -> None:
    Path(path).write_text(f"{K.fx!r} {K.fy!r} {K.cx!r} {K.cy!r}\n")


def parse_poses(path: PathLike) -> list[Pose]:
    """Camera-to-world poses stored as consecutive row-major 4x4 matrices."""
    vals = _numbers(path)
    if not vals or len(vals) % 16:
        raise FormatError(f"{path}: expected a multiple of 16 numbers, got {len(vals)}")
    mats = np.array(vals).reshape(-1, 4, 4)
    try:
        return [Pose.from_matrix(m) for m in mats]
    except GeometryError as e:
        raise FormatError(f"{path}: {e}") from None


def write_poses(poses, path: PathLike) -> None:
    lines = []
    for pose in poses:
        lines.extend(" ".join(repr(float(x)) for x in row) for row in pose.matrix)
    Path(path).write_text("\n".join(lines) + "\n")


def colorize_depth(depth: np.ndarray) -> np.ndarray:
    """Viridis rendering of a depth map, min-max normalized over valid pixels; missing pixels black."""
    from matplotlib import colormaps

    d = np.asarray(depth, dtype=np.float64)
    valid = np.isfinite(d) & (d > 0)
    out = np.zeros(d.shape + (3,), dtype=np.uint8)
    if not valid.any():
        return out
    lo, hi = d[valid].min(), d[valid].max()
    t = np.zeros_like(d)
    if hi > lo:
        t[valid] = (d[valid] - lo) / (hi - lo)
    rgb = colormaps["viridis"](t)[..., :3]
    out[valid] = np.floor(rgb[valid] * 255.0 + 0.5).astype(np.uint8)
    return out


def colorize_normals(normals: np.ndarray) -> np.ndarray:
    """``(n + 1) / 2 * 255`` with halves rounded up."""
    n = np.asarray(normals, dtype=np.float64)
    return np.clip(np.floor((n + 1.0) / 2.0 * 255.0 + 0.5), 0, 255).astype(np.uint8)


def colormap_render(grid: np.ndarray, path: PathLike) -> None:
    g = np.asarray(grid)
    rgb = colorize_normals(g) if g.ndim == 3 else colorize_depth(g)
    Image.fromarray(rgb, mode="RGB").save(path)


def _load_toml(path: PathLike) -> dict:
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None


def scene_spec_from_dict(doc: dict) -> SceneSpec:
    try:
        K = Intrinsics(**{k: float(doc["intrinsics"][k]) for k in ("fx", "fy", "cx", "cy")})
        regions = tuple(
            Region(tuple(int(x) for x in r["rect"]), SlantedPlane(*(float(x) for x in r["plane"])),
                   tuple(float(x) for x in r.get("color", (128, 128, 128))))
            for r in doc["regions"]
        )
        return SceneSpec(int(doc["width"]), int(doc["height"]), regions, K,
                         texture_amplitude=float(doc.get("texture_amplitude", 10.0)),
                         texture_seed=int(doc.get("texture_seed", 0)))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"bad scene description: {e!r}") from None


def load_scene_spec(path: PathLike) -> SceneSpec:
    return scene_spec_from_dict(_load_toml(path))


def scene_spec_to_toml(spec: SceneSpec) -> str:
    K = spec.intrinsics
    out = [f"width = {spec.width}", f"height = {spec.height}",
           f"texture_amplitude = {spec.texture_amplitude!r}", f"texture_seed = {spec.texture_seed}", "",
           "[intrinsics]", f"fx = {K.fx!r}", f"fy = {K.fy!r}", f"cx = {K.cx!r}", f"cy = {K.cy!r}"]
    for r in spec.regions:
        pl = r.plane
        out += ["", "[[regions]]", f"rect = [{', '.join(str(x) for x in r.rect)}]",
                f"plane = [{pl.a!r}, {pl.b!r}, {pl.t!r}]",
                f"color = [{', '.join(repr(float(c)) for c in r.color)}]"]
    return "\n".join(out) + "\n"


@dataclass
class RunConfig:
    """Settings of one ``solve`` run, loadable from a TOML document.

    Recognized tables: ``[solver]`` (SolverConfig fields), ``[pattern]``
    (NeighborhoodPattern fields), ``[confidence]`` (ConfidenceConfig fields)
    and ``[paths]`` (input/output file names, relative to the document).
    """

    solver: SolverConfig = field(default_factory=SolverConfig)
    confidence: ConfidenceConfig = field(default_factory=ConfidenceConfig)
    pattern: NeighborhoodPattern = field(default_factory=NeighborhoodPattern)
    paths: dict = field(default_factory=dict)
    references: list = field(default_factory=list)

    @classmethod
    def load(cls, path: PathLike) -> RunConfig:
        doc = _load_toml(path)
        base = Path(path).parent
        try:
            solver = SolverConfig(**doc.get("solver", {}))
            confidence = ConfidenceConfig(**doc.get("confidence", {}))
            pat = dict(doc.get("pattern", {}))
            if "offsets" in pat:
                pat["offsets"] = tuple(tuple(o) for o in pat["offsets"])
            pattern = NeighborhoodPattern(**pat)
        except TypeError as e:
            raise ConfigError(f"{path}: {e}") from None
        paths = {k: str(base / v) for k, v in doc.get("paths", {}).items()}
        refs = [{k: str(base / v) for k, v in r.items()} for r in doc.get("references", [])]
        cfg = cls(solver, confidence, pattern, paths, refs)
        cfg.check_inputs()
        return cfg

    def check_inputs(self) -> None:
        for key, p in self.paths.items():
            if not key.startswith("out") and not Path(p).exists():
                raise ConfigError(f"input file for {key!r} does not exist: {p}")
        for ref in self.references:
            for p in ref.values():
                if not Path(p).exists():
                    raise ConfigError(f"reference file does not exist: {p}")
