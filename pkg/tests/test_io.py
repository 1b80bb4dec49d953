import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from dnsolver import io
from dnsolver.core import Intrinsics, OrientationError, Pose
from dnsolver.solver import ConfigError
from dnsolver.synth import four_plane_spec, gen_planar_scene


def test_pfm_bottom_up_example(tmp_path):
    f = tmp_path / "a.pfm"
    f.write_bytes(b"Pf\n2 2\n-1.0\n" + struct.pack("<4f", 1, 2, 3, 4))
    assert io.read_pfm(f).tolist() == [[3.0, 4.0], [1.0, 2.0]]


def test_pfm_big_endian(tmp_path):
    f = tmp_path / "b.pfm"
    f.write_bytes(b"Pf\n2 1\n1.0\n" + struct.pack(">2f", 1.5, -2))
    assert io.read_pfm(f).tolist() == [[1.5, -2.0]]


def test_pfm_sizes_and_errors(tmp_path):
    f = tmp_path / "one.pfm"
    io.write_pfm(np.array([[0.5]]), f)
    data = f.read_bytes()
    assert len(data) == 12 + 4 and data[:12] == b"Pf\n1 1\n-1.0\n"
    with pytest.raises(io.FormatError):
        io.write_pfm(np.zeros((0, 3)), tmp_path / "e.pfm")
    bad = tmp_path / "p6.pfm"
    bad.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(io.FormatError):
        io.read_pfm(bad)
    bad.write_bytes(b"Pf\n2 2\n-1.0\n" + struct.pack("<3f", 1, 2, 3))
    with pytest.raises(io.FormatError):
        io.read_pfm(bad)
    bad.write_bytes(b"Pf\n1 1\n-1.0\n" + struct.pack("<f", float("nan")))
    with pytest.raises(io.FormatError):
        io.read_pfm(bad)


def test_pfm_normals(tmp_path):
    n = np.zeros((2, 3, 3))
    n[..., 2] = -2.0
    n[0, 0] = [1.0, 0.0, -1.0]
    f = tmp_path / "n.pfm"
    io.write_pfm(n, f)
    got = io.read_pfm(f)
    assert np.allclose(np.linalg.norm(got, axis=-1), 1.0)
    assert np.allclose(got[0, 0], np.array([1, 0, -1]) / np.sqrt(2))
    assert np.array_equal(io.read_pfm(f, normalize=False), n)
    n[1, 2] = [0.0, 0.0, 1.0]
    io.write_pfm(n, f)
    with pytest.raises(OrientationError):
        io.read_pfm(f)


finite32 = st.floats(allow_nan=False, allow_infinity=False, width=32)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=finite32))
def test_pfm_round_trip(tmp_path_factory, grid):
    f = tmp_path_factory.mktemp("rt") / "g.pfm"
    io.write_pfm(grid.astype(np.float64), f)
    back = io.read_pfm(f)
    assert np.array_equal(back.astype(np.float32).view(np.uint32), grid.view(np.uint32))
    g2 = tmp_path_factory.mktemp("rt") / "g2.pfm"
    io.write_pfm(back, g2)
    assert g2.read_bytes() == f.read_bytes()


def test_png16(tmp_path):
    f = tmp_path / "d.png"
    Image.fromarray(np.array([[1000, 0, 65535]], dtype=np.uint16)).save(f)
    d = io.read_depth_png16(f)
    assert d.tolist() == [[1.0, 0.0, 65.535]]
    io.write_depth_png16(d, tmp_path / "d2.png")
    assert np.array_equal(io.read_depth_png16(tmp_path / "d2.png"), d)
    rgb = tmp_path / "rgb.png"
    Image.fromarray(np.zeros((2, 2, 3), np.uint8)).save(rgb)
    with pytest.raises(io.FormatError):
        io.read_depth_png16(rgb)


def test_intrinsics_and_poses(tmp_path):
    k = tmp_path / "k.txt"
    io.write_intrinsics(Intrinsics(100.0, 120.5, 50.0, 40.25), k)
    assert io.parse_intrinsics(k) == Intrinsics(100.0, 120.5, 50.0, 40.25)
    k.write_text("1 2 3")
    with pytest.raises(io.FormatError):
        io.parse_intrinsics(k)

    p = tmp_path / "p.txt"
    p.write_text("1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n")
    (pose,) = io.parse_poses(p)
    assert np.array_equal(pose.matrix, np.eye(4))
    p.write_text("1 0 0 0.1\n0 1 0 0\n0 0 1 0\n0 0 0 1\n")
    (pose,) = io.parse_poses(p)
    assert np.array_equal(pose.rotation, np.eye(3)) and np.allclose(pose.translation, [0.1, 0, 0])
    p.write_text("1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 2\n")
    with pytest.raises(io.FormatError):
        io.parse_poses(p)
    p.write_text("2 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n")
    with pytest.raises(io.FormatError):
        io.parse_poses(p)
    p.write_text("1 0 0\n")
    with pytest.raises(io.FormatError):
        io.parse_poses(p)
    rot = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
    poses = [Pose.identity(), Pose(rot, np.array([1.0, 2.0, 3.0]))]
    io.write_poses(poses, p)
    back = io.parse_poses(p)
    assert all(np.array_equal(a.matrix, b.matrix) for a, b in zip(poses, back))


def test_colormaps(tmp_path):
    rgb = io.colorize_normals(np.array([[[0.0, 0.0, -1.0]]]))
    assert rgb[0, 0].tolist() == [128, 128, 0]
    const = io.colorize_depth(np.full((3, 4), 2.0))
    assert np.all(const == const[0, 0])
    d = np.array([[1.0, 0.0], [2.0, 3.0]])
    img = io.colorize_depth(d)
    assert img[0, 1].tolist() == [0, 0, 0]
    assert img[0, 0].tolist() != img[1, 1].tolist()
    io.colormap_render(d, tmp_path / "d.png")
    io.colormap_render(np.array([[[0.0, 0.0, -1.0]]]), tmp_path / "n.png")
    assert np.asarray(Image.open(tmp_path / "n.png"))[0, 0].tolist() == [128, 128, 0]


def test_scene_spec_toml_round_trip(tmp_path):
    spec = four_plane_spec(40, 30)
    f = tmp_path / "scene.toml"
    f.write_text(io.scene_spec_to_toml(spec))
    assert io.load_scene_spec(f) == spec
    assert np.array_equal(gen_planar_scene(io.load_scene_spec(f)).depth, gen_planar_scene(spec).depth)
    f.write_text("width = 4\n")
    with pytest.raises(ConfigError):
        io.load_scene_spec(f)


def test_run_config(tmp_path):
    (tmp_path / "d.pfm").write_bytes(b"")
    f = tmp_path / "run.toml"
    f.write_text('[solver]\niterations = 7\nconfidence_mode = "unified"\n'
                 '[pattern]\nkind = "random"\nsample_count = 8\n'
                 '[confidence]\ngamma1 = 2.0\n'
                 '[paths]\ndepth = "d.pfm"\nout_depth = "o.pfm"\n')
    cfg = io.RunConfig.load(f)
    assert cfg.solver.iterations == 7 and cfg.solver.confidence_mode == "unified"
    assert cfg.pattern.kind == "random" and cfg.pattern.sample_count == 8
    assert cfg.confidence.gamma1 == 2.0
    assert cfg.paths["depth"] == str(tmp_path / "d.pfm")
    f.write_text('[paths]\ndepth = "missing.pfm"\n')
    with pytest.raises(ConfigError):
        io.RunConfig.load(f)
    f.write_text('[solver]\niterations = 0\n')
    with pytest.raises(ConfigError):
        io.RunConfig.load(f)
    f.write_text('[solver]\nbogus = 1\n')
    with pytest.raises(ConfigError):
        io.RunConfig.load(f)
