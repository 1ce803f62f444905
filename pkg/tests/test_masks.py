import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointmap4d.errors import DimensionMismatch
from pointmap4d.masks import (
    FlowField,
    bilinear_sample,
    dynamic_mask,
    forward_backward_residual,
    nearest_sample,
    occlusion_mask,
    sample_bilinear,
)


def const_flow(shape, vec, valid=None):
    v = np.broadcast_to(np.asarray(vec, dtype=float), shape + (2,)).copy()
    return FlowField(v, np.ones(shape, bool) if valid is None else valid)


@given(
    st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3),
    st.floats(0, 9), st.floats(0, 7),
)
@settings(max_examples=100, deadline=None)
def test_bilinear_is_exact_on_affine_fields(a, b, c, u, v):
    H, W = 8, 10
    g = np.mgrid[0:H, 0:W].astype(float)
    field = (a * g[1] + b * g[0] + c)[..., None]
    out, ok = bilinear_sample(field, np.ones((H, W), bool), np.array([u, v]))
    assert ok
    assert abs(out[0] - (a * u + b * v + c)) < 1e-9


def test_bilinear_bounds():
    vals = np.arange(12, dtype=float).reshape(3, 4, 1)
    valid = np.ones((3, 4), bool)
    q = np.array([[3.0, 2.0], [3.0001, 1.0], [-0.001, 0.0], [0.0, 0.0], [np.nan, 1.0]])
    out, ok = bilinear_sample(vals, valid, q)
    assert list(ok) == [True, False, False, True, False]
    assert out[0, 0] == 11.0 and out[3, 0] == 0.0
    assert np.all(np.isnan(out[~ok]))


def test_bilinear_ignores_invalid_neighbor_with_zero_weight():
    vals = np.arange(12, dtype=float).reshape(3, 4, 1)
    valid = np.ones((3, 4), bool)
    valid[1, 2] = False
    _, ok_int = bilinear_sample(vals, valid, np.array([1.0, 1.0]))
    _, ok_frac = bilinear_sample(vals, valid, np.array([1.5, 1.0]))
    _, ok_on = bilinear_sample(vals, valid, np.array([2.0, 1.0]))
    assert ok_int and not ok_frac and not ok_on


def test_nearest_sample_rounds():
    vals = np.arange(12, dtype=float).reshape(3, 4, 1)
    out, ok = nearest_sample(vals, np.ones((3, 4), bool), np.array([[1.4, 0.6], [2.6, 1.2]]))
    assert ok.all() and list(out[:, 0]) == [5.0, 7.0]


def test_sample_bilinear_single_location():
    f = const_flow((4, 4), (1.5, -2.0))
    vec, ok = sample_bilinear(f, (1.3, 2.7))
    assert ok and np.allclose(vec, (1.5, -2.0))
    _, ok = sample_bilinear(f, (10.0, 0.0))
    assert not ok


def test_consistent_flows_are_not_occluded():
    f = const_flow((10, 12), (2.0, 1.0))
    b = const_flow((10, 12), (-2.0, -1.0))
    occ = occlusion_mask(f, b, 1.5)
    # the last two columns and the last row leave the frame
    expect = np.zeros((10, 12), bool)
    expect[:, -2:] = True
    expect[-1:, :] = True
    assert np.array_equal(occ, expect)


def test_inconsistent_backward_flow_is_occluded_above_threshold():
    f = const_flow((6, 6), (1.0, 0.0))
    b = const_flow((6, 6), (-1.0, 1.0))  # cycle residual exactly 1
    res, ok = forward_backward_residual(f, b)
    assert np.allclose(res[ok], 1.0)
    assert not occlusion_mask(f, b, 1.5)[ok].any()
    assert occlusion_mask(f, b, 0.5)[ok].all()
    # residual equal to t is not occluded (strict comparison)
    assert not occlusion_mask(f, b, 1.0)[ok].any()


def test_invalid_flow_counts_as_occluded():
    valid = np.ones((5, 5), bool)
    valid[2, 2] = False
    f = const_flow((5, 5), (0.0, 0.0), valid)
    b = const_flow((5, 5), (0.0, 0.0))
    occ = occlusion_mask(f, b)
    assert occ[2, 2] and occ.sum() == 1


def test_occlusion_monotone_in_threshold():
    rng = np.random.default_rng(0)
    f = FlowField(rng.normal(scale=2, size=(16, 16, 2)))
    b = FlowField(rng.normal(scale=2, size=(16, 16, 2)))
    prev = None
    for t in (0.01, 0.5, 1.5, 4.0):
        occ = occlusion_mask(f, b, t)
        if prev is not None:
            assert not (occ & ~prev).any()
        prev = occ


def test_dynamic_mask_threshold_is_strict():
    f_cam = const_flow((3, 3), (0.0, 0.0))
    vecs = np.zeros((3, 3, 2))
    vecs[0, 0] = (1.0, 0.0)  # deviation exactly tau
    vecs[1, 1] = (0.6, 0.9)  # above
    vecs[2, 2] = (0.3, 0.4)  # below
    m = dynamic_mask(FlowField(vecs), f_cam, 1.0)
    assert m[1, 1] and not m[0, 0] and not m[2, 2] and m.sum() == 1


def test_dynamic_mask_invalid_pixels_are_static():
    valid = np.ones((3, 3), bool)
    valid[0, 1] = False
    f = const_flow((3, 3), (5.0, 0.0), valid)
    m = dynamic_mask(f, const_flow((3, 3), (0.0, 0.0)))
    assert not m[0, 1] and m.sum() == 8


def test_shape_mismatch_and_thresholds():
    a, b = const_flow((3, 3), (0, 0)), const_flow((3, 4), (0, 0))
    with pytest.raises(DimensionMismatch):
        occlusion_mask(a, b)
    with pytest.raises(DimensionMismatch):
        dynamic_mask(a, b)
    with pytest.raises(ValueError):
        occlusion_mask(a, a, 0.0)
    with pytest.raises(ValueError):
        dynamic_mask(a, a, -1.0)
