"""Direct pointmap fitting: descend the total loss over pointmaps and confidences."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import NonFiniteLoss
from .losses import (
    DEFAULT_ALPHA,
    PairPrediction,
    SupervisionBundle,
    _norm_scale_arrays,
    flow_targets,
    loss_and_gradients,
    supervised_sets,
)

_CONF_FLOOR = 1e-3


@dataclass
class FitResult:
    prediction: PairPrediction
    trace: List[float] = field(default_factory=list)


def _to_logit(C):
    return np.log(np.maximum(np.asarray(C, dtype=np.float64) - 1.0, _CONF_FLOOR))


def _from_logit(c):
    return 1.0 + np.exp(c)


def fit_pointmaps(
    sup: SupervisionBundle,
    init: PairPrediction,
    steps: int = 2000,
    step_size: float = 1e-2,
    alpha: float = DEFAULT_ALPHA,
    sampling: str = "auto",
    final_step_ratio: float = 1e-3,
    betas=(0.9, 0.999),
    eps: float = 1e-12,
) -> FitResult:
    """Minimize the total loss starting from ``init``.

    Confidences are optimized through ``C = 1 + exp(c)`` so they stay >= 1;
    the input confidences are floored at ``1 + 1e-3`` when mapped to ``c``.
    Steps use Adam moments with a step size decaying geometrically from
    ``step_size`` to ``step_size * final_step_ratio``.

    Raises
    ------
    NonFiniteLoss
        if the loss or its gradient stops being finite; the trace so far is
        attached to the exception.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not step_size > 0:
        raise ValueError(f"step_size must be positive, got {step_size}")

    state = init.copy()
    logits = {k: _to_logit(getattr(init, k)) for k in ("C11", "C21", "C22", "C12")}
    for k, c in logits.items():
        setattr(state, k, _from_logit(c))
    names = ("X11", "X21", "X22", "X12", "C11", "C21", "C22", "C12")
    m = {k: 0.0 for k in names}
    v = {k: 0.0 for k in names}
    b1, b2 = betas
    decay = final_step_ratio ** (1.0 / max(steps - 1, 1))
    trace: List[float] = []

    for it in range(steps):
        bd, grads = loss_and_gradients(state, sup, alpha, sampling)
        trace.append(bd.total)
        if not math.isfinite(bd.total):
            raise NonFiniteLoss(f"loss became non-finite at step {it}", trace)
        lr = step_size * decay**it
        for k in names:
            g = getattr(grads, k)
            if k.startswith("C"):
                g = g * np.exp(logits[k])  # chain rule through C = 1 + exp(c)
            if not np.all(np.isfinite(g)):
                raise NonFiniteLoss(f"gradient of {k} became non-finite at step {it}", trace)
            m[k] = b1 * m[k] + (1 - b1) * g
            v[k] = b2 * v[k] + (1 - b2) * g * g
            mhat = m[k] / (1 - b1 ** (it + 1))
            vhat = v[k] / (1 - b2 ** (it + 1))
            upd = lr * mhat / (np.sqrt(vhat) + eps)
            if k.startswith("C"):
                logits[k] = logits[k] - upd
                setattr(state, k, _from_logit(logits[k]))
            else:
                setattr(state, k, getattr(state, k) - upd)

    final = loss_and_gradients(state, sup, alpha, sampling)[0].total
    trace.append(final)
    if not math.isfinite(final):
        raise NonFiniteLoss("final loss is non-finite", trace)
    return FitResult(state, trace)


def _aligned(pred: PairPrediction, sup: SupervisionBundle):
    """Predicted pointmaps rescaled to the ground-truth normalization of their pass."""
    v1, v2 = sup.valid1, sup.valid2
    s1 = _norm_scale_arrays(sup.gtX11, v1, sup.gtX21, v2) / _norm_scale_arrays(pred.X11, v1, pred.X21, v2)
    s2 = _norm_scale_arrays(sup.gtX22, v2, sup.gtX12, v1) / _norm_scale_arrays(pred.X22, v2, pred.X12, v1)
    return pred.X11 * s1, pred.X21 * s1, pred.X12 * s2


def supervised_errors(pred: PairPrediction, sup: SupervisionBundle, sampling: str = "auto"):
    """Per-pixel distances to the aligned targets on every supervised pixel.

    Predictions are rescaled by the ratio of ground-truth to predicted
    normalization scale, since the loss fixes them only up to a global scale
    per pass.  Returns a dict of 1-D arrays keyed by term.
    """
    sets = supervised_sets(sup, sampling)
    t21, _, t12, _ = flow_targets(sup, sampling)
    X11, X21, X12 = _aligned(pred, sup)
    return {
        "static1": np.linalg.norm(X11[sets["static1"]] - sup.gtX11[sets["static1"]], axis=-1),
        "static2": np.linalg.norm(X21[sets["static2"]] - sup.gtX21[sets["static2"]], axis=-1),
        "dyn2": np.linalg.norm(X21[sets["dyn2"]] - t21[sets["dyn2"]], axis=-1),
        "dyn1": np.linalg.norm(X12[sets["dyn1"]] - t12[sets["dyn1"]], axis=-1),
    }


def masked_rmse(pred: PairPrediction, sup: SupervisionBundle, sampling: str = "auto") -> float:
    errs = np.concatenate(list(supervised_errors(pred, sup, sampling).values()))
    return float(np.sqrt(np.mean(errs**2)))


def dynamic_residual(pred: PairPrediction, sup: SupervisionBundle, sampling: str = "auto") -> float:
    """Mean distance to the aligned target over dynamic, non-occluded pixels."""
    errs = supervised_errors(pred, sup, sampling)
    d = np.concatenate([errs["dyn2"], errs["dyn1"]])
    return float(d.mean()) if d.size else 0.0
