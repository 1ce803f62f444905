import functools

import numpy as np
import pytest
from scipy.ndimage import maximum_filter, minimum_filter

from pointmap4d import geom, masks, synth

ACCEPTANCE_LINES = []


@functools.lru_cache(maxsize=None)
def rendered(seed, width=64, height=48, shapes="mixed"):
    return synth.make_pair(synth.random_scene(seed, width, height, shapes=shapes))


@functools.lru_cache(maxsize=None)
def demo_pair():
    return synth.make_pair(synth.demo_scene())


def edge_band(labels):
    """Pixels whose 3x3 neighborhood holds more than one label."""
    a = np.asarray(labels).astype(np.int64)
    return maximum_filter(a, 3, mode="nearest") != minimum_filter(a, 3, mode="nearest")


def estimated_masks(rp, view):
    """Occlusion and dynamic masks computed from the pair's flows, depths and cameras."""
    c = rp.config
    if view == 1:
        f, b, D, rel = rp.f, rp.b, rp.D1, geom.relative_pose(c.P1, c.P2)
    else:
        f, b, D, rel = rp.b, rp.f, rp.D2, geom.relative_pose(c.P2, c.P1)
    fcam = geom.camera_induced_flow(D, c.K, rel.R, rel.T)
    return masks.occlusion_mask(f, b, 1.5), masks.dynamic_mask(f, fcam, 1.0)


def counts(est, gt, keep):
    return int((est & gt)[keep].sum()), int((est | gt)[keep].sum())


@pytest.fixture
def demo():
    return demo_pair()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
