import json
import subprocess
import sys

import numpy as np
import pytest

from dnsolver import io
from dnsolver.cli import main, run_benchmark
from dnsolver.metrics import depth_metrics


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out-dir", str(out), "--corrupt", "0.95", "--seed", "7"]) == 0
    return out


def solve_args(d, out_depth, out_normal, *extra):
    return ["solve", "--depth", str(d / "input_depth.pfm"), "--normal", str(d / "input_normal.pfm"),
            "--conf-d", str(d / "conf_d.pfm"), "--conf-n", str(d / "conf_n.pfm"), "--image", str(d / "image.png"),
            "--intrinsics", str(d / "intrinsics.txt"), "--out-depth", str(out_depth),
            "--out-normal", str(out_normal), *extra]


def test_synth_outputs(synth_dir):
    names = {p.name for p in synth_dir.iterdir()}
    assert {"gt_depth.pfm", "gt_normal.pfm", "image.png", "intrinsics.txt", "scene.toml", "input_depth.pfm",
            "input_normal.pfm", "conf_d.pfm", "conf_n.pfm"} <= names
    assert io.read_pfm(synth_dir / "gt_depth.pfm").shape == (200, 200)


def test_synth_sparsify(tmp_path):
    assert main(["synth", "--out-dir", str(tmp_path), "--sparsify", "0.02"]) == 0
    conf = io.read_pfm(tmp_path / "conf_d.pfm")
    assert abs(conf.sum() - 800) <= 50


def test_synth_from_spec(tmp_path, synth_dir):
    assert main(["synth", "--spec", str(synth_dir / "scene.toml"), "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "gt_depth.pfm").read_bytes() == (synth_dir / "gt_depth.pfm").read_bytes()


def test_solve_byte_identical_across_threads(synth_dir, tmp_path):
    outputs = []
    for i, threads in enumerate([1, 4, 16, 1]):
        od, on = tmp_path / f"d{i}.pfm", tmp_path / f"n{i}.pfm"
        assert main(["--threads", str(threads)] + solve_args(synth_dir, od, on, "--iters", "5")) == 0
        outputs.append((od.read_bytes(), on.read_bytes()))
    assert all(o == outputs[0] for o in outputs[1:])


def test_solve_viz_and_metrics(synth_dir, tmp_path, capsys):
    od, on = tmp_path / "d.pfm", tmp_path / "n.pfm"
    assert main(solve_args(synth_dir, od, on, "--iters", "3", "--viz-dir", str(tmp_path / "viz"))) == 0
    assert {p.name for p in (tmp_path / "viz").iterdir()} == {"input_depth.png", "input_normal.png",
                                                              "depth.png", "normal.png"}
    assert main(["metrics", "--pred", str(od), "--gt", str(synth_dir / "gt_depth.pfm"),
                 "--pred-normal", str(on), "--gt-normal", str(synth_dir / "gt_normal.pfm")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert set(doc) == {"abs_rel", "abs_diff", "sq_rel", "rmse", "rmse_log", "delta_1", "delta_2", "delta_3",
                        "mean_deg", "median_deg", "within_11_25", "within_22_5", "within_30"}
    out = tmp_path / "m.json"
    assert main(["metrics", "--pred", str(od), "--gt", str(synth_dir / "gt_depth.pfm"), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["abs_rel"] == doc["abs_rel"]


def test_doubling_iterations_never_worse(synth_dir, tmp_path):
    gt = io.read_pfm(synth_dir / "gt_depth.pfm")
    prev = None
    for iters in (1, 2, 4, 8, 16):
        od, on = tmp_path / f"d{iters}.pfm", tmp_path / f"n{iters}.pfm"
        assert main(solve_args(synth_dir, od, on, "--iters", str(iters))) == 0
        err = depth_metrics(io.read_pfm(od), gt).abs_rel
        if prev is not None:
            # float32 storage puts the floor near 1e-8
            assert err <= prev + 1e-7
        prev = err


def test_geoconf_and_hybrid(tmp_path):
    depth = np.full((20, 20), 2.0)
    io.write_pfm(depth, tmp_path / "t.pfm")
    (tmp_path / "pose.txt").write_text("1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n")
    (tmp_path / "k.txt").write_text("20 20 10 10\n")
    args = ["geoconf", "--target-depth", str(tmp_path / "t.pfm"), "--target-pose", str(tmp_path / "pose.txt"),
            "--ref-depth", str(tmp_path / "t.pfm"), "--ref-pose", str(tmp_path / "pose.txt"),
            "--intrinsics", str(tmp_path / "k.txt"), "--out", str(tmp_path / "g.pfm")]
    assert main(args) == 0
    assert np.all(io.read_pfm(tmp_path / "g.pfm") == 1.0)
    io.write_pfm(np.full((20, 20), 0.5), tmp_path / "deep.pfm")
    assert main(["hybrid", "--deep", str(tmp_path / "deep.pfm"), "--geo", str(tmp_path / "g.pfm"),
                 "--out", str(tmp_path / "h.pfm")]) == 0
    assert np.all(io.read_pfm(tmp_path / "h.pfm") == 0.5)
    no_refs = args[:5] + args[9:]
    assert main(no_refs) == 2


def test_exit_codes(synth_dir, tmp_path):
    od, on = tmp_path / "d.pfm", tmp_path / "n.pfm"
    missing = solve_args(synth_dir, od, on)
    missing[2] = str(tmp_path / "nope.pfm")
    assert main(missing) == 2
    assert main(solve_args(synth_dir, od, on, "--iters", "0")) == 2
    assert main(["--threads", "0"] + solve_args(synth_dir, od, on)) == 2
    assert main(["solve", "--depth", str(synth_dir / "input_depth.pfm")]) == 2
    bad = tmp_path / "bad.pfm"
    bad.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    broken = solve_args(synth_dir, od, on)
    broken[2] = str(bad)
    assert main(broken) == 1
    with pytest.raises(SystemExit) as e:
        main(["solve", "--iters", "many"])
    assert e.value.code == 2
    proc = subprocess.run([sys.executable, "-m", "dnsolver", "frobnicate"], capture_output=True)
    assert proc.returncode == 2


def test_benchmark_runs():
    assert run_benchmark(64, 48, iterations=2, threads=2) > 0
