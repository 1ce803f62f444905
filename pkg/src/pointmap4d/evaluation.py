"""Depth, pose and flow evaluation protocols and bullet-time fusion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import (
    DegenerateFit,
    DimensionMismatch,
    EmptyValidSet,
    FrameMismatch,
    InsufficientCorrespondences,
    NoConsensus,
)
from .geom import EPS_Z, DepthMap, FlowField, Intrinsics, Pointmap, Pose, pixel_grid
from .hashgrid import SpatialHashGrid, default_cell_size, median_nn_spacing

DELTA1_THRESHOLD = 1.25
EPS_DEPTH = 1e-6
MIN_PNP_POINTS = 6


# ---------------------------------------------------------------- depth


@dataclass
class DepthMetrics:
    abs_rel: float
    delta1: float
    n_valid: int


def _joint(pred: DepthMap, gt: DepthMap, mask=None):
    if pred.shape != gt.shape:
        raise DimensionMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    m = pred.valid & gt.valid
    if mask is not None:
        m &= np.asarray(mask, dtype=bool)
    return m


def affine_align(pred_depth: DepthMap, gt_depth: DepthMap, mask=None):
    """Least-squares scale and shift ``(s, b)`` minimizing ``sum (s*pred + b - gt)^2``."""
    m = _joint(pred_depth, gt_depth, mask)
    p = pred_depth.values[m]
    g = gt_depth.values[m]
    if p.size < 2:
        raise DegenerateFit(f"need at least 2 jointly valid pixels, got {p.size}")
    pm, gm = p.mean(), g.mean()
    dp = p - pm
    var = float(dp @ dp)
    if var <= (np.finfo(float).eps * max(abs(pm), 1.0)) ** 2 * p.size:
        raise DegenerateFit("prediction is constant on the valid set")
    s = float(dp @ (g - gm)) / var
    return s, float(gm - s * pm)


def depth_metrics(pred: DepthMap, gt: DepthMap, align: bool = True, mask=None) -> DepthMetrics:
    """AbsRel and delta_1 (ratio below 1.25) over jointly valid pixels."""
    m = _joint(pred, gt, mask)
    if not m.any():
        raise EmptyValidSet("no jointly valid pixels")
    d = pred.values[m]
    if align:
        s, b = affine_align(pred, gt, mask)
        d = np.maximum(s * d + b, EPS_DEPTH)
    g = gt.values[m]
    abs_rel = float(np.mean(np.abs(d - g) / g))
    ratio = np.maximum(d / g, g / d)
    return DepthMetrics(abs_rel, float(np.mean(ratio < DELTA1_THRESHOLD)), int(m.sum()))


# ---------------------------------------------------------------- pose


@dataclass
class PoseErrors:
    rot_deg: float
    trans_err: float


def pose_errors(pred: Pose, gt: Pose) -> PoseErrors:
    """Geodesic rotation error and scale-aligned translation error."""
    # rotation-vector magnitude keeps precision near zero, unlike arccos of the trace
    rot = float(np.degrees(Rotation.from_matrix(pred.R @ gt.R.T).magnitude()))
    tp, tg = pred.T, gt.T
    nn = float(tp @ tp)
    s = float(tp @ tg) / nn if nn > 0 else 0.0
    return PoseErrors(rot, float(np.linalg.norm(s * tp - tg)))


def _reprojection(R, t, X, uv, K: Intrinsics):
    Xc = X @ R.T + t
    z = Xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = K.to_pixels(Xc[:, :2] / z[:, None])
    err = np.linalg.norm(proj - uv, axis=1)
    return np.where(z > EPS_Z, err, np.inf)


def _pose_from_P(P):
    M = P[:, :3]
    if np.linalg.det(M) < 0:
        P = -P
        M = -M
    U, S, Vt = np.linalg.svd(M)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        return None
    return R, P[:, 3] / S.mean()


def _normalizer(X):
    c = X.mean(axis=0)
    d = np.linalg.norm(X - c, axis=1).mean()
    return c, (np.sqrt(X.shape[1]) / d if d > 0 else 1.0)


def _dlt_general(X, xn):
    """Six-or-more point linear solve for ``[R|t]`` from normalized image coordinates."""
    c, s = _normalizer(X)
    Xh = np.hstack([(X - c) * s, np.ones((len(X), 1))])
    A = np.zeros((2 * len(X), 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -xn[:, :1] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -xn[:, 1:2] * Xh
    _, sv, Vt = np.linalg.svd(A)
    if sv[-2] < 1e-9 * sv[0]:
        return None
    Pn = Vt[-1].reshape(3, 4)
    N = np.eye(4)
    N[:3, :3] *= s
    N[:3, 3] = -s * c
    return _pose_from_P(Pn @ N)


def _dlt_planar(X, xn):
    """Pose from points on a plane via a plane-to-image homography."""
    c = X.mean(axis=0)
    _, _, Vt = np.linalg.svd(X - c)
    e1, e2 = Vt[0], Vt[1]
    ab = np.stack([(X - c) @ e1, (X - c) @ e2], axis=1)
    c2, s2 = _normalizer(ab)
    abn = (ab - c2) * s2
    ci, si = _normalizer(xn)
    xnn = (xn - ci) * si
    A = np.zeros((2 * len(X), 9))
    src = np.hstack([abn, np.ones((len(X), 1))])
    A[0::2, 0:3] = src
    A[0::2, 6:9] = -xnn[:, :1] * src
    A[1::2, 3:6] = src
    A[1::2, 6:9] = -xnn[:, 1:2] * src
    _, sv, Vt2 = np.linalg.svd(A)
    if sv[-2] < 1e-9 * sv[0]:
        return None
    Hn = Vt2[-1].reshape(3, 3)
    Ts = np.array([[s2, 0, -s2 * c2[0]], [0, s2, -s2 * c2[1]], [0, 0, 1]])
    Ti = np.array([[si, 0, -si * ci[0]], [0, si, -si * ci[1]], [0, 0, 1]])
    H = np.linalg.inv(Ti) @ Hn @ Ts
    lam = 2.0 / (np.linalg.norm(H[:, 0]) + np.linalg.norm(H[:, 1]))
    if H[2, 2] * lam < 0:
        lam = -lam
    r1, r2 = lam * H[:, 0], lam * H[:, 1]
    Q = np.stack([r1, r2, np.cross(r1, r2)], axis=1)
    U, _, Vt3 = np.linalg.svd(Q)
    Q = U @ Vt3
    if np.linalg.det(Q) < 0:
        return None
    E = np.stack([e1, e2, np.cross(e1, e2)], axis=1)
    R = Q @ E.T
    t = lam * H[:, 2] - R @ c
    return R, t


def _minimal_pose(X, xn):
    c = X - X.mean(axis=0)
    sv = np.linalg.svd(c, compute_uv=False)
    if sv[0] <= 0:
        return None
    if sv[2] < 1e-6 * sv[0]:
        return _dlt_planar(X, xn)
    return _dlt_general(X, xn)


def refine_pose(R, t, X, uv, K: Intrinsics, iterations: int = 50):
    """Gauss-Newton on the pixel reprojection error (left rotation-vector update)."""
    R = np.array(R, dtype=np.float64)
    t = np.array(t, dtype=np.float64)

    def residual(R_, t_):
        Xc = X @ R_.T + t_
        return K.to_pixels(Xc[:, :2] / Xc[:, 2:3]) - uv, Xc

    r, Xc = residual(R, t)
    cost = float((r * r).sum())
    for _ in range(iterations):
        x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
        Jp = np.zeros((len(X), 2, 3))
        Jp[:, 0, 0] = K.fx / z
        Jp[:, 0, 2] = -K.fx * x / z**2
        Jp[:, 1, 1] = K.fy / z
        Jp[:, 1, 2] = -K.fy * y / z**2
        A = Xc - t
        skew = np.zeros((len(X), 3, 3))
        skew[:, 0, 1], skew[:, 0, 2] = -A[:, 2], A[:, 1]
        skew[:, 1, 0], skew[:, 1, 2] = A[:, 2], -A[:, 0]
        skew[:, 2, 0], skew[:, 2, 1] = -A[:, 1], A[:, 0]
        J = np.concatenate([Jp @ -skew, Jp], axis=2).reshape(-1, 6)
        H = J.T @ J
        g = J.T @ r.reshape(-1)
        try:
            delta = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        step = 1.0
        improved = False
        while step > 1e-6:
            R_new = Rotation.from_rotvec(step * delta[:3]).as_matrix() @ R
            t_new = t + step * delta[3:]
            r_new, Xc_new = residual(R_new, t_new)
            c_new = float((r_new * r_new).sum())
            if np.all(Xc_new[:, 2] > EPS_Z) and c_new <= cost:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        done = cost - c_new <= 1e-15 * max(cost, 1e-300) or np.linalg.norm(step * delta) < 1e-15
        R, t, r, Xc, cost = R_new, t_new, r_new, Xc_new, c_new
        if done:
            break
    # re-orthonormalize accumulated rotation
    U, _, Vt = np.linalg.svd(R)
    return U @ Vt, t


def pnp_ransac(
    points3d: np.ndarray,
    pixels: np.ndarray,
    K: Intrinsics,
    iterations: int = 1000,
    threshold: float = 2.0,
    seed: int = 0,
    min_inlier_ratio: float = 0.25,
    confidence: float = 0.9999,
    exclude=None,
):
    """Robust camera pose from 2D-3D correspondences.

    Six-point linear hypotheses (homography-based for coplanar samples) are
    scored by the number of correspondences reprojecting within
    ``threshold`` pixels; the best one, lowest iteration index on ties, is
    refined by Gauss-Newton on its inliers, then on the subset within three
    robust standard deviations of the inlier residuals.  Sampling stops early once the
    standard RANSAC bound for ``confidence`` is met.

    ``exclude`` is an optional boolean array over the correspondences (for
    instance a dynamic mask) whose entries are left out entirely.

    Returns the world-to-camera :class:`Pose` and a boolean inlier array.
    """
    X = np.asarray(points3d, dtype=np.float64).reshape(-1, 3)
    uv = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if len(X) != len(uv):
        raise DimensionMismatch(f"{len(X)} points vs {len(uv)} pixels")
    keep = np.all(np.isfinite(X), axis=1) & np.all(np.isfinite(uv), axis=1)
    if exclude is not None:
        exclude = np.asarray(exclude, dtype=bool).reshape(-1)
        if len(exclude) != len(keep):
            raise DimensionMismatch(f"exclude mask has {len(exclude)} entries for {len(keep)} correspondences")
        keep &= ~exclude
    idx_all = np.nonzero(keep)[0]
    X, uv = X[keep], uv[keep]
    n = len(X)
    if n < MIN_PNP_POINTS:
        raise InsufficientCorrespondences(f"need at least {MIN_PNP_POINTS} correspondences, got {n}")
    xn = (uv - [K.cx, K.cy]) / [K.fx, K.fy]
    rng = np.random.default_rng(seed)

    best_count, best = -1, None
    needed = iterations
    it = 0
    while it < min(iterations, needed):
        sample = rng.choice(n, size=MIN_PNP_POINTS, replace=False)
        it += 1
        hyp = _minimal_pose(X[sample], xn[sample])
        if hyp is None:
            continue
        inl = _reprojection(hyp[0], hyp[1], X, uv, K) < threshold
        count = int(inl.sum())
        if count > best_count:
            best_count, best = count, (hyp, inl)
            w = count / n
            if w >= 1.0:
                needed = it
            else:
                denom = np.log1p(-(w**MIN_PNP_POINTS))
                if denom < 0:
                    needed = min(iterations, int(np.ceil(np.log(1 - confidence) / denom)))

    if best is None or best_count < MIN_PNP_POINTS:
        raise NoConsensus("no hypothesis gathered enough inliers")
    (R, t), inl = best
    for _ in range(3):
        R, t = refine_pose(R, t, X[inl], uv[inl], K)
        new_inl = _reprojection(R, t, X, uv, K) < threshold
        if np.array_equal(new_inl, inl) or new_inl.sum() < MIN_PNP_POINTS:
            break
        inl = new_inl
    # Outliers that happen to land inside the pixel threshold bias the fit;
    # tighten the gate to a robust (MAD) multiple of the inlier residual scale.
    for _ in range(3):
        res = _reprojection(R, t, X, uv, K)
        sigma = 1.4826 * float(np.median(res[inl]))
        gate = min(threshold, max(3.0 * sigma, 1e-9 * threshold))
        tight = res < gate
        if tight.sum() < MIN_PNP_POINTS or np.array_equal(tight, inl):
            break
        R, t = refine_pose(R, t, X[tight], uv[tight], K)
        inl = tight
    inl = _reprojection(R, t, X, uv, K) < threshold
    ratio = inl.sum() / n
    if ratio < min_inlier_ratio:
        raise NoConsensus(f"best inlier ratio {ratio:.3f} is below {min_inlier_ratio}")
    full = np.zeros(len(keep), dtype=bool)
    full[idx_all[inl]] = True
    return Pose(R, t), full


def pnp_from_pointmap(X21: Pointmap, K: Intrinsics, exclude=None, **params):
    """Camera-2 pose in the pointmap's frame from a view-2 pointmap and its pixel grid.

    ``exclude`` (e.g. a dynamic mask) removes pixels from the correspondence
    set.  Returns the pose and an ``(H, W)`` inlier mask.
    """
    if exclude is not None and np.shape(exclude) != X21.shape:
        raise DimensionMismatch(f"exclude mask {np.shape(exclude)} vs pointmap {X21.shape}")
    grid = pixel_grid(X21.height, X21.width)
    pose, inl = pnp_ransac(X21.points.reshape(-1, 3), grid.reshape(-1, 2), K, exclude=exclude, **params)
    return pose, inl.reshape(X21.shape)


# ---------------------------------------------------------------- flow


def _refine_subpixel(X21: Pointmap, j_uv: np.ndarray, queries: np.ndarray, iterations: int = 8):
    """Continuous view-2 location closest to each query on the bilinear surface of ``X21``.

    Starting from the integer match, each of the up to four grid cells
    touching it is searched by clamped Gauss-Newton over the cell's bilinear
    patch; cells with an invalid corner are skipped.  The closest candidate
    wins, so the result is never farther in 3D than the integer match.
    """
    H, W = X21.shape
    P = X21.points
    best_q = j_uv.astype(np.float64).copy()
    ju, jv = j_uv[:, 0].astype(np.int64), j_uv[:, 1].astype(np.int64)
    best_d = np.linalg.norm(P[jv, ju] - queries, axis=1)
    for du in (-1, 0):
        for dv in (-1, 0):
            u0, v0 = ju + du, jv + dv
            ok = (u0 >= 0) & (v0 >= 0) & (u0 + 1 < W) & (v0 + 1 < H)
            idx = np.nonzero(ok)[0]
            u0, v0 = u0[idx], v0[idx]
            corners_ok = X21.valid[v0, u0] & X21.valid[v0, u0 + 1] & X21.valid[v0 + 1, u0] & X21.valid[v0 + 1, u0 + 1]
            idx, u0, v0 = idx[corners_ok], u0[corners_ok], v0[corners_ok]
            if idx.size == 0:
                continue
            P00, P10 = P[v0, u0], P[v0, u0 + 1]
            P01, P11 = P[v0 + 1, u0], P[v0 + 1, u0 + 1]
            x = queries[idx]
            a = np.full(idx.size, float(-du))
            b = np.full(idx.size, float(-dv))
            for _ in range(iterations):
                S = (P00 * ((1 - a) * (1 - b))[:, None] + P10 * (a * (1 - b))[:, None]
                     + P01 * ((1 - a) * b)[:, None] + P11 * (a * b)[:, None])
                Sa = (P10 - P00) * (1 - b)[:, None] + (P11 - P01) * b[:, None]
                Sb = (P01 - P00) * (1 - a)[:, None] + (P11 - P10) * a[:, None]
                r = S - x
                haa = np.einsum("ij,ij->i", Sa, Sa)
                hab = np.einsum("ij,ij->i", Sa, Sb)
                hbb = np.einsum("ij,ij->i", Sb, Sb)
                ga = np.einsum("ij,ij->i", Sa, r)
                gb = np.einsum("ij,ij->i", Sb, r)
                det = haa * hbb - hab * hab
                good = det > 1e-300
                safe = np.where(good, det, 1.0)
                a = np.clip(np.where(good, a - (hbb * ga - hab * gb) / safe, a), 0.0, 1.0)
                b = np.clip(np.where(good, b - (haa * gb - hab * ga) / safe, b), 0.0, 1.0)
            S = (P00 * ((1 - a) * (1 - b))[:, None] + P10 * (a * (1 - b))[:, None]
                 + P01 * ((1 - a) * b)[:, None] + P11 * (a * b)[:, None])
            d = np.linalg.norm(S - x, axis=1)
            better = d < best_d[idx]
            sel = idx[better]
            best_d[sel] = d[better]
            best_q[sel, 0] = u0[better] + a[better]
            best_q[sel, 1] = v0[better] + b[better]
    return best_q, best_d


def pointmap_to_flow(
    X11: Pointmap, X21: Pointmap, reject_radius: Optional[float] = None, subpixel: bool = True
) -> FlowField:
    """Correspondence flow by nearest 3D neighbor between two pointmaps in one frame.

    Each valid view-1 pixel is matched to the view-2 pixel whose point is
    closest; with ``subpixel`` the match then moves to the closest location
    on the bilinear surface through the neighboring view-2 points.  Matches
    farther than ``reject_radius`` are invalid.  The radius defaults to three
    times the median nearest-neighbor spacing of ``X21``; ``np.inf`` keeps
    every match.
    """
    if X11.frame_tag != X21.frame_tag:
        raise FrameMismatch(f"pointmaps live in different frames: {X11.frame_tag!r} vs {X21.frame_tag!r}")
    if X11.shape != X21.shape:
        raise DimensionMismatch(f"pointmap shapes differ: {X11.shape} vs {X21.shape}")
    if not X11.valid.any() or not X21.valid.any():
        raise EmptyValidSet("pointmap has no valid pixels")
    targets = X21.points[X21.valid]
    if reject_radius is None:
        reject_radius = 3.0 * median_nn_spacing(targets) if len(targets) > 1 else np.inf
    cell = reject_radius if np.isfinite(reject_radius) and reject_radius > 0 else default_cell_size(targets)
    grid = SpatialHashGrid(targets, cell)
    queries = X11.points[X11.valid]
    j, dist = grid.nearest(queries, radius=reject_radius)
    matched = j >= 0
    pix2 = pixel_grid(X21.height, X21.width)[X21.valid]
    pix1 = pixel_grid(X11.height, X11.width)[X11.valid]
    q = np.full((len(j), 2), np.nan)
    q[matched] = pix2[j[matched]]
    if subpixel and matched.any():
        q[matched], _ = _refine_subpixel(X21, q[matched], queries[matched])
    flow = np.full(X11.shape + (2,), np.nan)
    flow[X11.valid] = q - pix1
    valid = np.zeros(X11.shape, dtype=bool)
    valid[X11.valid] = matched
    return FlowField(flow, valid)


def epe(pred: FlowField, gt: FlowField, mask=None) -> float:
    """Mean end-point error over jointly valid pixels."""
    if pred.shape != gt.shape:
        raise DimensionMismatch(f"flow shapes differ: {pred.shape} vs {gt.shape}")
    m = pred.valid & gt.valid
    if mask is not None:
        m &= np.asarray(mask, dtype=bool)
    if not m.any():
        raise EmptyValidSet("no jointly valid flow vectors")
    return float(np.linalg.norm(pred.vectors[m] - gt.vectors[m], axis=-1).mean())


# ---------------------------------------------------------------- fusion


@dataclass
class FusedCloud:
    points: np.ndarray
    confidences: np.ndarray
    sources: np.ndarray
    frame_tag: str

    def __len__(self):
        return len(self.points)


def bullet_time_fuse(
    pointmaps: Sequence[Pointmap], confidences: Optional[Sequence[np.ndarray]] = None, min_conf: float = 1.0
) -> FusedCloud:
    """Concatenate valid points of pointmaps sharing one reference frame.

    Points with confidence below ``min_conf`` are dropped; each kept point is
    tagged with the index of its source map.  No deduplication happens.
    """
    if not pointmaps:
        raise EmptyValidSet("nothing to fuse")
    tag = pointmaps[0].frame_tag
    for k, pm in enumerate(pointmaps):
        if pm.frame_tag != tag:
            raise FrameMismatch(f"pointmap {k} is in frame {pm.frame_tag!r}, expected {tag!r}")
    if confidences is None:
        confidences = [np.ones(pm.shape) for pm in pointmaps]
    if len(confidences) != len(pointmaps):
        raise DimensionMismatch(f"{len(pointmaps)} pointmaps but {len(confidences)} confidence maps")
    pts, conf, src = [], [], []
    for k, (pm, c) in enumerate(zip(pointmaps, confidences)):
        c = np.asarray(c, dtype=np.float64)
        if c.shape != pm.shape:
            raise DimensionMismatch(f"confidence map {k} has shape {c.shape}, expected {pm.shape}")
        keep = pm.valid & (c >= min_conf)
        pts.append(pm.points[keep])
        conf.append(c[keep])
        src.append(np.full(int(keep.sum()), k, dtype=np.int32))
    return FusedCloud(np.concatenate(pts), np.concatenate(conf), np.concatenate(src), tag)
