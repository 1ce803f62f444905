import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from pointmap4d.errors import DimensionMismatch, NearZeroDepth
from pointmap4d.geom import (
    DepthMap,
    FlowField,
    Intrinsics,
    Pointmap,
    Pose,
    camera_induced_flow,
    pixel_grid,
    pointmap_in_frame,
    project,
    project_points,
    relative_pose,
    unproject_depth,
)

K = Intrinsics(50.0, 55.0, 15.5, 11.5)


def random_pose(rng, t_scale=0.5):
    return Pose(Rotation.from_rotvec(rng.normal(scale=0.3, size=3)).as_matrix(), rng.normal(scale=t_scale, size=3))


rotvecs = st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=3)
translations = st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3)


def test_intrinsics_matrix_roundtrip():
    assert np.allclose(K.K @ K.K_inv, np.eye(3), atol=1e-15)
    assert Intrinsics.from_matrix(K.K) == K


def test_intrinsics_rejects_skew_and_bad_focal():
    M = K.K.copy()
    M[0, 1] = 0.1
    with pytest.raises(ValueError):
        Intrinsics.from_matrix(M)
    with pytest.raises(ValueError):
        Intrinsics(0.0, 1.0, 0.0, 0.0)


def test_pose_rejects_non_rigid():
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, 2.0]), np.zeros(3))
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


@given(rotvecs, translations)
@settings(max_examples=50, deadline=None)
def test_pose_inverse_composes_to_identity(rv, t):
    P = Pose(Rotation.from_rotvec(rv).as_matrix(), np.array(t))
    I = P.compose(P.inverse())
    assert np.allclose(I.R, np.eye(3), atol=1e-12)
    assert np.allclose(I.T, 0.0, atol=1e-12)
    assert np.allclose(P.apply(P.center()), 0.0, atol=1e-12)


def test_compose_order():
    rng = np.random.default_rng(0)
    A, B = random_pose(rng), random_pose(rng)
    x = rng.normal(size=(5, 3))
    assert np.allclose(A.compose(B).apply(x), A.apply(B.apply(x)), atol=1e-12)


def test_relative_pose_maps_between_cameras():
    rng = np.random.default_rng(1)
    P1, P2 = random_pose(rng), random_pose(rng)
    world = rng.normal(size=(10, 3))
    rel = relative_pose(P1, P2)
    assert np.allclose(rel.apply(P1.apply(world)), P2.apply(world), atol=1e-12)


def test_matrix_roundtrip():
    P = random_pose(np.random.default_rng(2))
    Q = Pose.from_matrix(P.matrix())
    assert np.array_equal(P.R, Q.R) and np.array_equal(P.T, Q.T)


def test_project_near_zero_depth():
    assert np.allclose(project([2.0, 4.0, 2.0]), [1.0, 2.0])
    with pytest.raises(NearZeroDepth):
        project([1.0, 1.0, 0.0])
    xy, ok = project_points(np.array([[1.0, 1.0, 1e-12], [1.0, 2.0, 4.0]]))
    assert not ok[0] and ok[1]
    assert np.all(np.isnan(xy[0]))


def test_pixel_grid_layout():
    g = pixel_grid(3, 4)
    assert g.shape == (3, 4, 2)
    assert tuple(g[2, 1]) == (1.0, 2.0)


def test_unproject_then_project_recovers_pixels():
    rng = np.random.default_rng(3)
    D = DepthMap(rng.uniform(1, 5, size=(24, 32)))
    pm = unproject_depth(D, K)
    assert np.allclose(pm.points[..., 2], D.values)
    uv = K.to_pixels(pm.points[..., :2] / pm.points[..., 2:])
    assert np.allclose(uv, pixel_grid(24, 32), atol=1e-12)


def test_pointmap_in_frame_same_pose_is_exact():
    rng = np.random.default_rng(4)
    D = DepthMap(rng.uniform(1, 5, size=(6, 7)))
    P = random_pose(rng)
    a = pointmap_in_frame(D, K, P, P)
    b = unproject_depth(D, K)
    assert np.array_equal(a.points, b.points)


def test_invalid_pixels_carry_nan():
    vals = np.ones((4, 4))
    valid = np.ones((4, 4), bool)
    valid[1, 2] = False
    D = DepthMap(vals, valid)
    assert np.isnan(D.values[1, 2])
    pm = unproject_depth(D, K)
    assert not pm.valid[1, 2] and np.all(np.isnan(pm.points[1, 2]))


def test_shape_validation():
    with pytest.raises(DimensionMismatch):
        Pointmap(np.zeros((4, 4, 2)))
    with pytest.raises(DimensionMismatch):
        FlowField(np.zeros((4, 4, 2)), np.ones((3, 4), bool))
    with pytest.raises(DimensionMismatch):
        DepthMap(np.zeros((4, 4)), np.ones((4, 5), bool))


def test_camera_induced_flow_zero_for_identity():
    D = DepthMap(np.full((5, 6), 3.0))
    f = camera_induced_flow(D, K, np.eye(3), np.zeros(3))
    assert np.all(f.valid)
    assert np.allclose(f.vectors, 0.0, atol=1e-12)


def test_camera_induced_flow_matches_reprojection():
    rng = np.random.default_rng(5)
    D = DepthMap(rng.uniform(2, 6, size=(12, 16)))
    rel = random_pose(rng, 0.2)
    f = camera_induced_flow(D, K, rel.R, rel.T)
    pts = rel.apply(unproject_depth(D, K).points)
    expect = K.to_pixels(pts[..., :2] / pts[..., 2:]) - pixel_grid(12, 16)
    assert np.allclose(f.vectors, expect, atol=1e-9)


def test_camera_induced_flow_pure_translation_parallax():
    # sideways motion by tx shifts a fronto-parallel plane at depth d by fx * tx / d pixels
    D = DepthMap(np.full((4, 5), 4.0))
    f = camera_induced_flow(D, K, np.eye(3), [0.8, 0.0, 0.0])
    assert np.allclose(f.vectors[..., 0], K.fx * 0.8 / 4.0)
    assert np.allclose(f.vectors[..., 1], 0.0)
