import sys

import numpy as np
import pytest

from skelfit.skeleton import BoneBlock, ClavicleRef, LandmarkDef, MatchPoint, Seam, SkeletonModel
from skelfit.synth import gen_models


@pytest.fixture(scope="session")
def models():
    return gen_models(0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def toy_skeleton(k=1):
    """Two blocks along x: 'thorax' at the origin, 'clavicle' with its CP at (2, 0, 0).

    One seam pairs thorax point (0.9, 0, 0) with clavicle point (1.0, 0, 0)
    (rest gap 0.1). ct pairs join thorax (0, 0, 0)/(0, 1, 0) to clavicle
    (2, 0, 0)/(2, 1, 0), both along x with rest length 2.
    """
    z = np.zeros((3, k))
    thorax = BoneBlock(
        "thorax", [0, 0, 0], z, [[0, 0, 0], [0, 1, 0]], np.zeros((2, 3, k)),
        [MatchPoint(0, [0.9, 0, 0], z)],
    )
    clav = BoneBlock(
        "clavicle", [2, 0, 0], z, [[0, 0, 0], [0, 1, 0]], np.zeros((2, 3, k)),
        [MatchPoint(0, [-1.0, 0, 0], z)],
    )
    seams = [Seam(0, 1, [(0, 0)], [0.1])]
    refs = [ClavicleRef(1, 0, 0, [1.0, 0, 0])]
    lms = [LandmarkDef("a", 0, [0, 0, 0], z), LandmarkDef("b", 1, [0, 0, 0], z)]
    return SkeletonModel([thorax, clav], seams, refs, -np.ones(k), np.ones(k), lms,
                         ct_pairs=[(0, 0, 1, 0), (0, 1, 1, 1)])


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is None or not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acc.RESULTS):
        terminalreporter.write_line(acc.RESULTS[n])
