"""Static and dynamic pointmap alignment losses with analytic gradients.

Naming follows the two-pass layout of a pointmap regressor:

* pass 1 predicts ``X11`` (view 1) and ``X21`` (view 2), both in camera 1;
* pass 2 (views swapped) predicts ``X22`` and ``X12``, both in camera 2.

Each pass is normalized by its own mean point norm.  The static term
supervises view 1 everywhere and view 2 on static pixels; the dynamic term
pulls dynamic, non-occluded pixels onto the ground-truth pointmap of the
other view sampled at the flow endpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Dict, Optional

import numpy as np

from .errors import DegenerateScale, DimensionMismatch, EmptyValidSet
from .geom import FlowField, Pointmap, pixel_grid
from .masks import bilinear_sample, nearest_sample

DEFAULT_ALPHA = 0.2
EPS_SCALE = 1e-12
PROB_CLAMP = 1e-12

SAMPLING_MODES = ("auto", "exact", "bilinear", "nearest")


@dataclass
class PairPrediction:
    """Predicted pointmaps ``(H, W, 3)`` and confidences ``(H, W)`` for both passes.

    The same container holds gradients returned by :func:`loss_gradients`.
    """

    X11: np.ndarray
    X21: np.ndarray
    X22: np.ndarray
    X12: np.ndarray
    C11: np.ndarray
    C21: np.ndarray
    C22: np.ndarray
    C12: np.ndarray

    def __post_init__(self):
        shape = np.shape(self.X11)[:2]
        for f in fields(self):
            arr = np.asarray(getattr(self, f.name), dtype=np.float64)
            want = shape + (3,) if f.name.startswith("X") else shape
            if arr.shape != want:
                raise DimensionMismatch(f"{f.name} has shape {arr.shape}, expected {want}")
            setattr(self, f.name, arr)

    @property
    def shape(self):
        return self.X11.shape[:2]

    def copy(self) -> "PairPrediction":
        return PairPrediction(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def arrays(self) -> Dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def zeros_like(cls, other: "PairPrediction") -> "PairPrediction":
        return cls(**{k: np.zeros_like(v) for k, v in other.arrays().items()})

    @classmethod
    def from_bundle(cls, sup: "SupervisionBundle", confidence: float = 1.0) -> "PairPrediction":
        """Prediction equal to the bundle's (4D) ground truth, NaNs zeroed."""
        H, W = sup.shape
        c = np.full((H, W), float(confidence))
        return cls(
            X11=np.nan_to_num(sup.gtX11),
            X21=np.nan_to_num(sup.gtX21),
            X22=np.nan_to_num(sup.gtX22),
            X12=np.nan_to_num(sup.gtX12),
            C11=c.copy(),
            C21=c.copy(),
            C22=c.copy(),
            C12=c.copy(),
        )


@dataclass
class SupervisionBundle:
    """Everything needed to evaluate the static and dynamic losses for one pair.

    ``gtX21`` and ``gtX12`` are the aligned (4D) targets.  ``target21`` and
    ``target12`` optionally carry the exact ground truth of the other view
    evaluated at the flow endpoints (``p + b(p)`` and ``p + f(p)``); when absent
    the loss samples the gridded GT instead.
    """

    gtX11: np.ndarray
    gtX21: np.ndarray
    gtX22: np.ndarray
    gtX12: np.ndarray
    f: FlowField
    b: FlowField
    Mocc1: np.ndarray
    Mocc2: np.ndarray
    Mdyn1: np.ndarray
    Mdyn2: np.ndarray
    valid1: np.ndarray
    valid2: np.ndarray
    target21: Optional[np.ndarray] = None
    target12: Optional[np.ndarray] = None

    def __post_init__(self):
        shape = np.shape(self.valid1)
        for name in ("gtX11", "gtX21", "gtX22", "gtX12", "target21", "target12"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != shape + (3,):
                raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {shape + (3,)}")
            setattr(self, name, arr)
        for name in ("Mocc1", "Mocc2", "Mdyn1", "Mdyn2", "valid1", "valid2"):
            arr = np.asarray(getattr(self, name), dtype=bool)
            if arr.shape != shape:
                raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {shape}")
            setattr(self, name, arr)
        for name in ("f", "b"):
            if getattr(self, name).shape != shape:
                raise DimensionMismatch(f"flow {name} has shape {getattr(self, name).shape}, expected {shape}")
        # GT maps are defined exactly on the valid sets
        for name, valid in (("gtX11", self.valid1), ("gtX21", self.valid2), ("gtX22", self.valid2), ("gtX12", self.valid1)):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr[valid])):
                raise DimensionMismatch(f"{name} is not finite on its valid set")

    @property
    def shape(self):
        return self.valid1.shape

    @property
    def has_exact_targets(self) -> bool:
        return self.target21 is not None and self.target12 is not None


@dataclass
class LossBreakdown:
    static_total: float
    dyn_total: float
    total: float
    maps: Dict[str, np.ndarray] = field(default_factory=dict)
    scales: Dict[str, float] = field(default_factory=dict)


def _norm_scale_arrays(a, va, b, vb) -> float:
    n = int(va.sum()) + int(vb.sum())
    if n == 0:
        raise EmptyValidSet("no valid pixels to normalize over")
    total = np.linalg.norm(a[va], axis=-1).sum() + np.linalg.norm(b[vb], axis=-1).sum()
    return float(total / n)


def norm_scale(X_a: Pointmap, X_b: Pointmap) -> float:
    """Mean Euclidean norm of the valid points of two pointmaps."""
    return _norm_scale_arrays(X_a.points, X_a.valid, X_b.points, X_b.valid)


def _checked_scale(a, va, b, vb, what: str) -> float:
    z = _norm_scale_arrays(a, va, b, vb)
    if not z > EPS_SCALE:
        raise DegenerateScale(f"normalization scale of {what} is {z!r}")
    return z


def _resolve_sampling(sup: SupervisionBundle, sampling: str) -> str:
    if sampling not in SAMPLING_MODES:
        raise ValueError(f"unknown sampling mode {sampling!r}; choose from {SAMPLING_MODES}")
    if sampling == "auto":
        return "exact" if sup.has_exact_targets else "bilinear"
    if sampling == "exact" and not sup.has_exact_targets:
        raise ValueError("exact sampling requested but the bundle carries no flow-endpoint targets")
    return sampling


def flow_targets(sup: SupervisionBundle, sampling: str = "auto"):
    """Ground truth of the other view at flow endpoints for both passes.

    Returns ``(target21, ok21, target12, ok12)``: ``gtX11`` at ``p + b(p)`` for
    view-2 pixels, and ``gtX22`` at ``p + f(p)`` for view-1 pixels.
    """
    mode = _resolve_sampling(sup, sampling)
    if mode == "exact":
        t21, t12 = sup.target21, sup.target12
        ok21 = np.all(np.isfinite(t21), axis=-1) & sup.b.valid
        ok12 = np.all(np.isfinite(t12), axis=-1) & sup.f.valid
        return t21, ok21, t12, ok12
    sampler = bilinear_sample if mode == "bilinear" else nearest_sample
    grid = pixel_grid(*sup.shape)
    t21, ok21 = sampler(sup.gtX11, sup.valid1, grid + np.nan_to_num(sup.b.vectors))
    t12, ok12 = sampler(sup.gtX22, sup.valid2, grid + np.nan_to_num(sup.f.vectors))
    return t21, ok21 & sup.b.valid, t12, ok12 & sup.f.valid


def supervised_sets(sup: SupervisionBundle, sampling: str = "auto") -> Dict[str, np.ndarray]:
    """Pixel sets carrying each loss term."""
    _, ok21, _, ok12 = flow_targets(sup, sampling)
    return {
        "static1": sup.valid1.copy(),
        "static2": sup.valid2 & ~sup.Mdyn2,
        "dyn2": sup.valid2 & sup.Mdyn2 & ~sup.Mocc2 & ok21,
        "dyn1": sup.valid1 & sup.Mdyn1 & ~sup.Mocc1 & ok12,
    }


class _Group:
    """Residual terms ``w * || P / z - T ||`` sharing one prediction scale ``z``."""

    def __init__(self, pred_pts, target_pts, weights, sel, z, zbar, want_grad):
        P = pred_pts[sel]
        r = P / z - target_pts[sel] / zbar
        n = np.linalg.norm(r, axis=-1)
        self.sel = sel
        self.norms = n
        self.weights = weights[sel]
        self.value = self.weights * n
        if want_grad:
            with np.errstate(invalid="ignore", divide="ignore"):
                u = np.where(n[:, None] > 0, r / n[:, None], 0.0)
            wu = self.weights[:, None] * u
            self.grad_P = wu / z
            # d/dz of w * ||P/z - T|| is -w u.P / z^2
            self.dz = float(-(wu * P).sum() / z**2)
            self.grad_w = n


def _scatter(shape, sel, values, width=None):
    out = np.zeros(shape + ((width,) if width else ()))
    out[sel] = values
    return out


def _scale_grad(points, valid, dz, n_total):
    """Gradient of ``dz * z`` where ``z`` is the mean norm over ``n_total`` points."""
    g = np.zeros_like(points)
    P = points[valid]
    nrm = np.linalg.norm(P, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(nrm > 0, P / nrm, 0.0)
    g[valid] = dz * unit / n_total
    return g


def _evaluate(pred: PairPrediction, sup: SupervisionBundle, alpha: float, sampling: str, want_grad: bool):
    if pred.shape != sup.shape:
        raise DimensionMismatch(f"prediction shape {pred.shape} differs from supervision shape {sup.shape}")
    if np.any(pred.C11 < 1) or np.any(pred.C21 < 1) or np.any(pred.C12 < 1) or np.any(pred.C22 < 1):
        raise ValueError("confidences must be >= 1")
    shape = sup.shape
    v1, v2 = sup.valid1, sup.valid2
    t21, ok21, t12, ok12 = flow_targets(sup, sampling)

    static1 = v1
    static2 = v2 & ~sup.Mdyn2
    dyn2 = v2 & sup.Mdyn2 & ~sup.Mocc2 & ok21
    dyn1 = v1 & sup.Mdyn1 & ~sup.Mocc1 & ok12

    z1 = _checked_scale(pred.X11, v1, pred.X21, v2, "predicted pass 1")
    zb1 = _checked_scale(sup.gtX11, v1, sup.gtX21, v2, "ground-truth pass 1")

    g_s1 = _Group(pred.X11, sup.gtX11, pred.C11, static1, z1, zb1, want_grad)
    g_s2 = _Group(pred.X21, sup.gtX21, pred.C21, static2, z1, zb1, want_grad)
    g_d2 = _Group(pred.X21, np.nan_to_num(t21), pred.C21, dyn2, z1, zb1, want_grad)

    log_c11 = np.log(pred.C11[static1])
    log_c21 = np.log(pred.C21[static2])
    static_total = float(g_s1.value.sum() - alpha * log_c11.sum() + g_s2.value.sum() - alpha * log_c21.sum())

    scales = {"z1": z1, "zbar1": zb1}
    if dyn1.any():
        z2 = _checked_scale(pred.X22, v2, pred.X12, v1, "predicted pass 2")
        zb2 = _checked_scale(sup.gtX22, v2, sup.gtX12, v1, "ground-truth pass 2")
        g_d1 = _Group(pred.X12, np.nan_to_num(t12), pred.C12, dyn1, z2, zb2, want_grad)
        scales.update(z2=z2, zbar2=zb2)
    else:
        g_d1 = None
    dyn_total = float(g_d2.value.sum() + (g_d1.value.sum() if g_d1 is not None else 0.0))

    maps = {
        "regr1": _scatter(shape, static1, g_s1.norms),
        "regr2": _scatter(shape, static2, g_s2.norms),
        "static1": _scatter(shape, static1, g_s1.value - alpha * log_c11),
        "static2": _scatter(shape, static2, g_s2.value - alpha * log_c21),
        "dyn2": _scatter(shape, dyn2, g_d2.value),
        "dyn1": _scatter(shape, dyn1, g_d1.value) if g_d1 is not None else np.zeros(shape),
        "dyn_resid2": _scatter(shape, dyn2, g_d2.norms),
        "dyn_resid1": _scatter(shape, dyn1, g_d1.norms) if g_d1 is not None else np.zeros(shape),
    }
    breakdown = LossBreakdown(static_total, dyn_total, static_total + dyn_total, maps, scales)
    if not want_grad:
        return breakdown, None

    grads = PairPrediction.zeros_like(pred)
    n1 = int(v1.sum()) + int(v2.sum())
    grads.X11[static1] += g_s1.grad_P
    grads.X21[static2] += g_s2.grad_P
    grads.X21[dyn2] += g_d2.grad_P
    dz1 = g_s1.dz + g_s2.dz + g_d2.dz
    grads.X11 += _scale_grad(pred.X11, v1, dz1, n1)
    grads.X21 += _scale_grad(pred.X21, v2, dz1, n1)
    grads.C11[static1] += g_s1.grad_w - alpha / pred.C11[static1]
    grads.C21[static2] += g_s2.grad_w - alpha / pred.C21[static2]
    grads.C21[dyn2] += g_d2.grad_w
    if g_d1 is not None:
        grads.X12[dyn1] += g_d1.grad_P
        grads.X22 += _scale_grad(pred.X22, v2, g_d1.dz, n1)
        grads.X12 += _scale_grad(pred.X12, v1, g_d1.dz, n1)
        grads.C12[dyn1] += g_d1.grad_w
    return breakdown, grads


def regr_loss_masked(pred: PairPrediction, sup: SupervisionBundle):
    """Per-pixel scale-normalized regression residuals for views 1 and 2.

    View-2 residuals are zero on dynamic pixels; both maps are zero outside
    the valid sets.
    """
    bd, _ = _evaluate(pred, sup, DEFAULT_ALPHA, "auto", want_grad=False)
    return bd.maps["regr1"], bd.maps["regr2"]


def static_loss(pred: PairPrediction, sup: SupervisionBundle, alpha: float = DEFAULT_ALPHA):
    bd, _ = _evaluate(pred, sup, alpha, "auto", want_grad=False)
    return bd.static_total, {"static1": bd.maps["static1"], "static2": bd.maps["static2"]}


def dynamic_alignment_loss(pred: PairPrediction, sup: SupervisionBundle, sampling: str = "auto"):
    bd, _ = _evaluate(pred, sup, DEFAULT_ALPHA, sampling, want_grad=False)
    return bd.dyn_total, {k: bd.maps[k] for k in ("dyn2", "dyn1", "dyn_resid2", "dyn_resid1")}


def total_loss(
    pred: PairPrediction, sup: SupervisionBundle, alpha: float = DEFAULT_ALPHA, sampling: str = "auto"
) -> LossBreakdown:
    bd, _ = _evaluate(pred, sup, alpha, sampling, want_grad=False)
    return bd


def loss_gradients(
    pred: PairPrediction, sup: SupervisionBundle, alpha: float = DEFAULT_ALPHA, sampling: str = "auto"
) -> PairPrediction:
    """Analytic gradient of the total loss w.r.t. every predicted coordinate and confidence.

    The dependence of the normalization scales on the predicted pointmaps is
    included.  At an exactly zero residual the norm's subgradient 0 is used.
    """
    _, grads = _evaluate(pred, sup, alpha, sampling, want_grad=True)
    return grads


def loss_and_gradients(pred, sup, alpha=DEFAULT_ALPHA, sampling="auto"):
    return _evaluate(pred, sup, alpha, sampling, want_grad=True)


def mask_bce_loss(logits, gt) -> float:
    """Mean binary cross-entropy of sigmoid(logits) against a binary mask."""
    logits = np.asarray(logits, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    if logits.shape != gt.shape:
        raise DimensionMismatch(f"logit map {logits.shape} vs mask {gt.shape}")
    p = np.clip(0.5 * (1.0 + np.tanh(0.5 * logits)), PROB_CLAMP, 1.0 - PROB_CLAMP)
    ce = np.where(gt, -np.log(p), -np.log1p(-p))
    return float(ce.mean())
