"""Violation and gap metrics for predicted dual points.

All gaps are percentages relative to ``|L*|``. The certified gap re-completes
the predicted ``y`` with the unregularized closed form, so it is a valid
bound for every method regardless of what the head predicted for ``zl, zu``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from dualprox.completion import complete_unregularized
from dualprox.lp_core import DualPoint, ParametricLpInstance, dual_objective, neg

logger = logging.getLogger(__name__)

UNDEFINED_RTOL = 1e-9


def _violation_terms(inst: ParametricLpInstance, dp: DualPoint):
    eq = np.asarray(dp.y) @ inst.A + dp.zl - dp.zu - inst.c
    return neg(dp.zl) + neg(dp.zu) + np.abs(eq)


def violation_metric(inst: ParametricLpInstance, dp: DualPoint):
    """Coordinate mean of ``|zl|^- + |zu|^- + |A'y + zl - zu - c|``."""
    return _violation_terms(inst, dp).mean(axis=-1)


def _percent_gap(lstar, bound, scale):
    lstar = np.asarray(lstar, dtype=np.float64)
    undefined = np.abs(lstar) < UNDEFINED_RTOL * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        gap = 100.0 * np.abs(lstar - bound) / np.abs(lstar)
    return np.where(undefined, np.nan, gap)


def objective_gap(inst: ParametricLpInstance, dp: DualPoint, lstar):
    """Percent gap of the raw predicted objective; NaN when ``L*`` is numerically zero."""
    return _percent_gap(lstar, dual_objective(inst, dp), inst.scale())


def certified_bound(inst: ParametricLpInstance, y):
    """``b'y + Xi_0(y)``: a valid lower bound on ``L*`` for any ``y``."""
    comp = complete_unregularized(inst, y)
    return np.sum(inst.b * np.asarray(y), axis=-1) + comp.xi


def dual_gap_star(inst: ParametricLpInstance, y, lstar):
    return _percent_gap(lstar, certified_bound(inst, y), inst.scale())


@dataclass
class MetricsRecord:
    v_mean: float
    dgap_mean: float
    gstar_mean: float
    gstar_max: float
    per_sample: list = field(default_factory=list)  # (sample id, v, dgap, gstar)
    extras: dict = field(default_factory=dict)
    n_undefined: int = 0


def evaluate_predictions(family: ParametricLpInstance, dp: DualPoint, lstar, sample_ids=None) -> MetricsRecord:
    lstar = np.asarray(lstar, dtype=np.float64)
    if lstar.shape != (family.b.shape[0],) or not np.all(np.isfinite(lstar)):
        raise ValueError("every evaluated sample needs a finite optimal value")
    ids = np.arange(lstar.size) if sample_ids is None else np.asarray(sample_ids)
    terms = _violation_terms(family, dp)
    v = terms.mean(axis=-1)
    dgap = objective_gap(family, dp, lstar)
    bound = certified_bound(family, dp.y)
    gstar = _percent_gap(lstar, bound, family.scale())
    ok = ~np.isnan(gstar)
    n_bad = int((~ok).sum())
    if n_bad:
        logger.warning("%d samples have |L*| ~ 0; excluded from gap means", n_bad)
    per_sample = [(int(i), float(a), float(b), float(c)) for i, a, b, c in zip(ids, v, dgap, gstar)]
    return MetricsRecord(
        v_mean=float(v.mean()),
        dgap_mean=float(np.mean(dgap[ok])) if ok.any() else float("nan"),
        gstar_mean=float(np.mean(gstar[ok])) if ok.any() else float("nan"),
        gstar_max=float(np.max(gstar[ok])) if ok.any() else float("nan"),
        per_sample=per_sample,
        extras={
            "v_sum": terms.sum(axis=-1),
            "v_linf": terms.max(axis=-1),
            "bound": bound,
            "lstar": lstar,
        },
        n_undefined=n_bad,
    )


def evaluate_model(predict: Callable, features, family: ParametricLpInstance, lstar, sample_ids=None) -> MetricsRecord:
    """Run ``predict(features, family) -> DualPoint`` and score it against ``lstar``."""
    if lstar is None:
        raise ValueError("evaluation requires oracle optimal values")
    dp = predict(np.asarray(features), family)
    return evaluate_predictions(family, dp, lstar, sample_ids)


def make_validator(features, family: ParametricLpInstance, lstar, cfg):
    """Closure giving ``(mean G*, max G*)`` of a model on a fixed slice."""
    from dualprox.mlp import predict_dual

    lstar = np.asarray(lstar, dtype=np.float64)
    features = np.asarray(features)

    def validate(model):
        dp = predict_dual(model, features, family, cfg)
        g = dual_gap_star(family, dp.y, lstar)
        return float(np.nanmean(g)), float(np.nanmax(g))

    return validate
