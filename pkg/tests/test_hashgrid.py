import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import cKDTree

from pointmap4d.hashgrid import SpatialHashGrid, default_cell_size, median_nn_spacing


@pytest.mark.parametrize("cell", [0.05, 0.3, 2.0])
def test_matches_kdtree(cell):
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, size=(500, 3))
    q = rng.uniform(-1.5, 1.5, size=(200, 3))
    idx, dist = SpatialHashGrid(pts, cell).nearest(q)
    d_ref, i_ref = cKDTree(pts).query(q)
    assert np.allclose(dist, d_ref, atol=1e-12)
    assert np.array_equal(idx, i_ref)


def test_exclude_self_matches_second_neighbor():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(300, 3))
    idx, dist = SpatialHashGrid(pts, default_cell_size(pts)).nearest(pts, exclude_self=True)
    d_ref, i_ref = cKDTree(pts).query(pts, k=2)
    assert np.array_equal(idx, i_ref[:, 1])
    assert np.allclose(dist, d_ref[:, 1])


def test_radius_rejects_far_points():
    pts = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]])
    idx, dist = SpatialHashGrid(pts, 1.0).nearest(np.array([[0.5, 0, 0], [5.2, 0, 0], [30.0, 0, 0]]), radius=3.0)
    assert list(idx) == [0, -1, -1]
    assert dist[0] == 0.5 and np.isinf(dist[1])
    idx, _ = SpatialHashGrid(pts, 1.0).nearest(np.array([[30.0, 0, 0]]))
    assert idx[0] == 1


def test_ties_resolve_to_lowest_index():
    pts = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0]])
    idx, _ = SpatialHashGrid(pts, 0.4).nearest(np.zeros((1, 3)))
    assert idx[0] == 0
    dup = np.array([[0.2, 0.2, 0.2]] * 3)
    idx, _ = SpatialHashGrid(dup, 1.0).nearest(np.zeros((1, 3)))
    assert idx[0] == 0


def test_empty_inputs():
    g = SpatialHashGrid(np.zeros((0, 3)), 1.0)
    idx, dist = g.nearest(np.zeros((2, 3)))
    assert list(idx) == [-1, -1] and np.all(np.isinf(dist))
    with pytest.raises(ValueError):
        SpatialHashGrid(np.zeros((3, 2)), 1.0)
    with pytest.raises(ValueError):
        SpatialHashGrid(np.zeros((3, 3)), 0.0)


@given(st.integers(0, 10_000), st.floats(0.01, 3.0))
@settings(max_examples=40, deadline=None)
def test_nearest_distance_property(seed, cell):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-2, 2, size=(60, 3))
    q = rng.uniform(-3, 3, size=(20, 3))
    _, dist = SpatialHashGrid(pts, cell).nearest(q)
    brute = np.linalg.norm(q[:, None] - pts[None], axis=-1).min(axis=1)
    assert np.allclose(dist, brute, atol=1e-12)


def test_median_spacing_on_lattice():
    g = np.stack(np.meshgrid(np.arange(5), np.arange(5), np.arange(5)), -1).reshape(-1, 3) * 0.25
    assert median_nn_spacing(g.astype(float)) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        median_nn_spacing(np.zeros((1, 3)))
