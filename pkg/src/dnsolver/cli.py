"""Command-line driver.

Exit codes: 0 on success, 2 on configuration errors (bad flags, missing
input files, invalid settings), 1 on runtime errors (unreadable or
malformed data, failed writes).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .confidence import ConfidenceConfig, View, geometric_confidence, hybrid_confidence
from .core import GeometryError, ShapeError
from .metrics import depth_metrics, normal_metrics
from .solver import ConfigError, NeighborhoodPattern, SolverConfig, solve
from .synth import (
    CorruptionSpec,
    corrupt,
    four_plane_spec,
    gen_planar_scene,
    sparse_normals,
    sparsify,
)

log = logging.getLogger("dnsolver")


def _existing(path: str) -> str:
    if not Path(path).exists():
        raise ConfigError(f"input file does not exist: {path}")
    return path


def _read_depth(path: str) -> np.ndarray:
    if path.lower().endswith(".png"):
        return io.read_depth_png16(_existing(path))
    return io.read_pfm(_existing(path))


def _solve_settings(args):
    run = io.RunConfig.load(args.config) if args.config else io.RunConfig()
    overrides = {
        "iterations": args.iters, "alpha": args.alpha, "sigma_x_sq": args.sigma_x2,
        "sigma_c_sq": args.sigma_c2, "anchor_mode": args.anchor, "confidence_mode": args.mode,
        "confidence_update": args.conf_update,
    }
    cfg = replace(run.solver, threads=args.threads,
                  **{k: v for k, v in overrides.items() if v is not None})
    pattern = run.pattern
    kind = args.pattern or pattern.kind
    if kind == "random":
        pattern = NeighborhoodPattern.random_window(
            args.window_radius if args.window_radius is not None else pattern.window_radius,
            args.samples if args.samples is not None else pattern.sample_count,
            args.pattern_seed if args.pattern_seed is not None else pattern.seed)
    elif kind != pattern.kind:
        pattern = NeighborhoodPattern.checkerboard()
    paths = dict(run.paths)
    for key in ("depth", "normal", "conf_d", "conf_n", "image", "intrinsics", "out_depth", "out_normal"):
        if getattr(args, key) is not None:
            paths[key] = getattr(args, key)
    missing = [k for k in ("depth", "normal", "conf_d", "image", "intrinsics", "out_depth", "out_normal")
               if k not in paths]
    if missing:
        raise ConfigError("missing required inputs: " + ", ".join("--" + k.replace("_", "-") for k in missing))
    return cfg, pattern, paths


def cmd_solve(args) -> None:
    cfg, pattern, paths = _solve_settings(args)
    depth = _read_depth(paths["depth"])
    normal = io.read_pfm(_existing(paths["normal"]))
    conf_d = io.read_pfm(_existing(paths["conf_d"]))
    conf_n = io.read_pfm(_existing(paths["conf_n"])) if paths.get("conf_n") else None
    image = io.read_image(_existing(paths["image"]))
    K = io.parse_intrinsics(_existing(paths["intrinsics"]))
    t0 = time.perf_counter()
    result = solve(depth, normal, image, K, conf_d, conf_n, pattern=pattern, cfg=cfg)
    log.info("solved %dx%d in %d iterations, %.3f s", depth.shape[1], depth.shape[0],
             cfg.iterations, time.perf_counter() - t0)
    io.write_pfm(result.depth, paths["out_depth"])
    io.write_pfm(result.normal, paths["out_normal"])
    if args.viz_dir:
        viz = Path(args.viz_dir)
        viz.mkdir(parents=True, exist_ok=True)
        io.colormap_render(depth, viz / "input_depth.png")
        io.colormap_render(normal, viz / "input_normal.png")
        io.colormap_render(result.depth, viz / "depth.png")
        io.colormap_render(result.normal, viz / "normal.png")


def cmd_geoconf(args) -> None:
    if len(args.ref_depth) != len(args.ref_pose):
        raise ConfigError("--ref-depth and --ref-pose must be given the same number of times")
    if not args.ref_depth:
        raise ConfigError("at least one reference view is required")
    K = io.parse_intrinsics(_existing(args.intrinsics))
    cfg = ConfidenceConfig(gamma_geo=args.gamma, oob_value=args.oob)

    def view(depth_path, pose_path):
        poses = io.parse_poses(_existing(pose_path))
        if len(poses) != 1:
            raise io.FormatError(f"{pose_path}: expected exactly one pose, got {len(poses)}")
        return View(_read_depth(depth_path), poses[0], K)

    target = view(args.target_depth, args.target_pose)
    refs = [view(d, p) for d, p in zip(args.ref_depth, args.ref_pose)]
    io.write_pfm(geometric_confidence(target, refs, cfg), args.out)


def cmd_hybrid(args) -> None:
    io.write_pfm(hybrid_confidence(io.read_pfm(_existing(args.deep)), io.read_pfm(_existing(args.geo))), args.out)


def cmd_synth(args) -> None:
    spec = io.load_scene_spec(args.spec) if args.spec else four_plane_spec()
    scene = gen_planar_scene(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_pfm(scene.depth, out / "gt_depth.pfm")
    io.write_pfm(scene.normal, out / "gt_normal.pfm")
    io.write_image(scene.image, out / "image.png")
    io.write_intrinsics(scene.intrinsics, out / "intrinsics.txt")
    (out / "scene.toml").write_text(io.scene_spec_to_toml(spec))
    if args.corrupt is not None:
        depth, normal, conf_d, conf_n = corrupt(scene, CorruptionSpec(p_noise=args.corrupt, seed=args.seed))
        io.write_pfm(depth, out / "input_depth.pfm")
        io.write_pfm(normal, out / "input_normal.pfm")
        io.write_pfm(conf_d, out / "conf_d.pfm")
        io.write_pfm(conf_n, out / "conf_n.pfm")
    elif args.sparsify is not None:
        depth, conf_d = sparsify(scene, args.sparsify, seed=args.seed)
        io.write_pfm(depth, out / "input_depth.pfm")
        io.write_pfm(sparse_normals(scene, conf_d), out / "input_normal.pfm")
        io.write_pfm(conf_d, out / "conf_d.pfm")


def cmd_metrics(args) -> None:
    if (args.pred_normal is None) != (args.gt_normal is None):
        raise ConfigError("--pred-normal and --gt-normal must be given together")
    pred = io.read_pfm(_existing(args.pred))
    gt = io.read_pfm(_existing(args.gt))
    result = depth_metrics(pred, gt).to_dict()
    if args.pred_normal:
        pn = io.read_pfm(_existing(args.pred_normal))
        gn = io.read_pfm(_existing(args.gt_normal))
        result.update(normal_metrics(pn, gn, mask=gt > 0).to_dict())
    text = json.dumps(result, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def run_benchmark(width: int = 640, height: int = 480, iterations: int = 3, threads: int = 8) -> float:
    """Mean seconds per solver iteration on a corrupted four-plane scene."""
    scene = gen_planar_scene(four_plane_spec(width, height))
    depth, normal, cd, cn = corrupt(scene, CorruptionSpec(seed=0))
    stamps = []
    cfg = SolverConfig(iterations=iterations, threads=threads)
    start = time.perf_counter()
    solve(depth, normal, scene.image, scene.intrinsics, cd, cn, cfg=cfg,
          callback=lambda *_: stamps.append(time.perf_counter()))
    # the first interval also contains the one-off neighbor and weight tables
    steps = np.diff([start] + stamps)
    return float(np.mean(steps[1:] if len(steps) > 1 else steps))


def cmd_bench(args) -> None:
    per_iter = run_benchmark(args.width, args.height, args.iters, args.threads)
    print(f"{args.width}x{args.height} threads={args.threads}: {per_iter * 1e3:.1f} ms/iter")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dnsolver", description="Iterative depth-normal solver")
    parser.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="refine depth and normal maps")
    p.add_argument("--config", help="TOML run configuration; flags override it")
    p.add_argument("--depth")
    p.add_argument("--normal")
    p.add_argument("--conf-d", dest="conf_d")
    p.add_argument("--conf-n", dest="conf_n", help="defaults to the depth confidence")
    p.add_argument("--image")
    p.add_argument("--intrinsics")
    p.add_argument("--iters", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--sigma-x2", dest="sigma_x2", type=float)
    p.add_argument("--sigma-c2", dest="sigma_c2", type=float)
    p.add_argument("--pattern", choices=("checkerboard", "random"))
    p.add_argument("--window-radius", dest="window_radius", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--pattern-seed", dest="pattern_seed", type=int)
    p.add_argument("--anchor", choices=("initial", "previous"))
    p.add_argument("--mode", choices=("separate", "unified"))
    p.add_argument("--conf-update", dest="conf_update", choices=("propagate", "fixed"))
    p.add_argument("--out-depth", dest="out_depth")
    p.add_argument("--out-normal", dest="out_normal")
    p.add_argument("--viz-dir", dest="viz_dir")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("geoconf", help="geometric consistency confidence")
    p.add_argument("--target-depth", required=True)
    p.add_argument("--target-pose", required=True)
    p.add_argument("--ref-depth", action="append", default=[])
    p.add_argument("--ref-pose", action="append", default=[])
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--gamma", type=float, default=5.0)
    p.add_argument("--oob", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_geoconf)

    p = sub.add_parser("hybrid", help="multiply deep and geometric confidence")
    p.add_argument("--deep", required=True)
    p.add_argument("--geo", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_hybrid)

    p = sub.add_parser("synth", help="generate a synthetic planar scene")
    p.add_argument("--spec", help="TOML scene description (default: four-plane scene)")
    p.add_argument("--out-dir", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--corrupt", type=float, metavar="P")
    g.add_argument("--sparsify", type=float, metavar="FRACTION")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("metrics", help="depth (and normal) error metrics as JSON")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--pred-normal")
    p.add_argument("--gt-normal")
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bench", help="time solver iterations")
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--iters", type=int, default=3)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        args.func(args)
    except ConfigError as e:
        log.error("%s", e)
        return 2
    except (io.FormatError, GeometryError, ShapeError, OSError, ValueError) as e:
        log.error("%s", e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
