"""Forward-backward occlusion check and camera-motion dynamic mask."""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch
from .geom import FlowField, pixel_grid

__all__ = [
    "FlowField",
    "bilinear_sample",
    "nearest_sample",
    "sample_bilinear",
    "occlusion_mask",
    "dynamic_mask",
    "DEFAULT_T_OCC",
    "DEFAULT_TAU",
]

DEFAULT_T_OCC = 1.5
DEFAULT_TAU = 1.0


def bilinear_sample(values: np.ndarray, valid: np.ndarray, q: np.ndarray):
    """Bilinearly interpolate a per-pixel field at continuous locations.

    Parameters
    ----------
    values : (H, W, C) array
    valid : (H, W) bool array
    q : (..., 2) array of ``(u, v)`` locations

    Returns
    -------
    out : (..., C) array, NaN where invalid
    ok : (...) bool array
        False when ``q`` leaves ``[0, W-1] x [0, H-1]`` or a neighbor that
        receives non-zero weight is invalid.
    """
    H, W = valid.shape
    q = np.asarray(q, dtype=np.float64)
    u, v = q[..., 0], q[..., 1]
    inside = np.isfinite(u) & np.isfinite(v) & (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    us = np.where(inside, u, 0.0)
    vs = np.where(inside, v, 0.0)
    # clamp the upper corner so q on the last row/column keeps a zero-weight neighbor in range
    u0 = np.minimum(np.floor(us).astype(np.intp), max(W - 2, 0))
    v0 = np.minimum(np.floor(vs).astype(np.intp), max(H - 2, 0))
    u1 = np.minimum(u0 + 1, W - 1)
    v1 = np.minimum(v0 + 1, H - 1)
    au = us - u0
    av = vs - v0
    weights = ((1 - au) * (1 - av), au * (1 - av), (1 - au) * av, au * av)
    corners = ((v0, u0), (v0, u1), (v1, u0), (v1, u1))

    out = np.zeros(q.shape[:-1] + (values.shape[-1],))
    ok = inside.copy()
    for w, (rr, cc) in zip(weights, corners):
        used = w > 0
        ok &= ~used | valid[rr, cc]
        sample = values[rr, cc]
        out += np.where(used[..., None], w[..., None] * np.nan_to_num(sample), 0.0)
    out[~ok] = np.nan
    return out, ok


def nearest_sample(values: np.ndarray, valid: np.ndarray, q: np.ndarray):
    """Nearest-pixel lookup with the same bounds rule as :func:`bilinear_sample`."""
    H, W = valid.shape
    q = np.asarray(q, dtype=np.float64)
    u, v = q[..., 0], q[..., 1]
    inside = np.isfinite(u) & np.isfinite(v) & (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    cc = np.where(inside, np.rint(np.where(inside, u, 0.0)), 0).astype(np.intp)
    rr = np.where(inside, np.rint(np.where(inside, v, 0.0)), 0).astype(np.intp)
    ok = inside & valid[rr, cc]
    out = np.where(ok[..., None], values[rr, cc], np.nan)
    return out, ok


def sample_bilinear(field: FlowField, q):
    """Sample a flow field at one continuous location ``q = (u, v)``.

    Returns the interpolated 2-vector and whether it is valid.
    """
    out, ok = bilinear_sample(field.vectors, field.valid, np.asarray(q, dtype=np.float64))
    return out, bool(ok)


def _check_same_shape(a: FlowField, b: FlowField):
    if a.shape != b.shape:
        raise DimensionMismatch(f"flow fields differ in shape: {a.shape} vs {b.shape}")


def forward_backward_residual(f: FlowField, b: FlowField):
    """Cycle residual ``|p + f(p) + b(p + f(p)) - p|`` and its validity."""
    _check_same_shape(f, b)
    grid = pixel_grid(*f.shape)
    target = grid + f.vectors
    back, ok = bilinear_sample(b.vectors, b.valid, target)
    ok &= f.valid
    residual = np.linalg.norm(target + back - grid, axis=-1)
    return np.where(ok, residual, np.nan), ok


def occlusion_mask(f: FlowField, b: FlowField, t: float = DEFAULT_T_OCC) -> np.ndarray:
    """Pixels failing the forward-backward cycle check (True = occluded).

    Pixels without a usable forward flow or backward sample count as occluded.
    """
    if not t > 0:
        raise ValueError(f"occlusion threshold must be positive, got {t}")
    residual, ok = forward_backward_residual(f, b)
    return ~ok | (np.nan_to_num(residual) > t)


def dynamic_mask(f: FlowField, f_cam: FlowField, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Pixels whose observed flow departs from the camera-induced flow by more than ``tau``."""
    if not tau > 0:
        raise ValueError(f"dynamic threshold must be positive, got {tau}")
    _check_same_shape(f, f_cam)
    ok = f.valid & f_cam.valid
    dev = np.linalg.norm(np.nan_to_num(f_cam.vectors - f.vectors), axis=-1)
    return ok & (dev > tau)
