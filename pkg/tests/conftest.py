import numpy as np
import pytest

from dnsolver.core import Intrinsics, normals_from_slopes
from dnsolver.solver import SolverState
from dnsolver.synth import CorruptionSpec, corrupt, four_plane_spec, gen_planar_scene


def random_state(rng, h=9, w=11, conf_lo=0.0, zero_frac=0.2, slope=0.6):
    """A small random but valid solver state."""
    K = Intrinsics(fx=rng.uniform(8, 20), fy=rng.uniform(8, 20), cx=w / 2 + rng.uniform(-1, 1),
                   cy=h / 2 + rng.uniform(-1, 1))
    depth = rng.uniform(1.0, 3.0, (h, w))
    anchor = rng.uniform(1.0, 3.0, (h, w))
    normal = normals_from_slopes(rng.uniform(-slope, slope, (h, w)), rng.uniform(-slope, slope, (h, w)))
    anchor_n = normals_from_slopes(rng.uniform(-slope, slope, (h, w)), rng.uniform(-slope, slope, (h, w)))
    cd = rng.uniform(conf_lo, 1.0, (h, w))
    cn = rng.uniform(conf_lo, 1.0, (h, w))
    if zero_frac:
        cd[rng.random((h, w)) < zero_frac] = 0.0
        cn[rng.random((h, w)) < zero_frac] = 0.0
    # small color differences keep the bilateral weights away from underflow
    image = np.clip(128 + rng.uniform(-6, 6, (h, w, 3)), 0, 255)
    return SolverState(depth, normal, anchor, anchor_n, cd, cn, image, K)


@pytest.fixture(scope="session")
def four_plane():
    return gen_planar_scene(four_plane_spec())


@pytest.fixture(scope="session")
def corrupted(four_plane):
    return corrupt(four_plane, CorruptionSpec(seed=7))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
