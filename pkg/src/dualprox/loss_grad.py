"""Smoothed self-supervised loss at the completed dual point, and its gradient in y.

Because the completion is optimal for fixed ``y``, the envelope theorem gives
``dL/dy = b - A x(y)`` with ``x`` the multiplier returned by the completion;
no differentiation through the completion formulas is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dualprox.completion import Regularizer, RegularizerKind, complete
from dualprox.lp_core import ParametricLpInstance


@dataclass(frozen=True)
class LossValue:
    total: np.ndarray
    dual_obj: np.ndarray
    barrier: np.ndarray


def s3l_loss(inst: ParametricLpInstance, y, reg: Regularizer) -> LossValue:
    """Loss value (maximization form); batched over leading axes of ``y``."""
    y = np.asarray(y, dtype=np.float64)
    out = complete(inst, y, reg)
    by = np.sum(inst.b * y, axis=-1)
    dual_obj = by + out.zl @ inst.l - out.zu @ inst.u
    if reg.kind is RegularizerKind.NONE:
        barrier = np.zeros_like(dual_obj)
    else:
        barrier = reg.mu * np.sum(np.log(out.zl) + np.log(out.zu), axis=-1)
    return LossValue(dual_obj + barrier, dual_obj, barrier)


def s3l_grad_y(inst: ParametricLpInstance, y, reg: Regularizer) -> np.ndarray:
    """``b - A x(y)``: the gradient for ``mu > 0``, a supergradient for ``mu = 0``."""
    out = complete(inst, y, reg)
    return inst.b - out.x @ inst.A.T


def s3l_loss_and_grad(inst: ParametricLpInstance, y, reg: Regularizer):
    """Single completion pass returning ``(LossValue, grad_y)``."""
    y = np.asarray(y, dtype=np.float64)
    out = complete(inst, y, reg)
    by = np.sum(inst.b * y, axis=-1)
    dual_obj = by + out.zl @ inst.l - out.zu @ inst.u
    if reg.kind is RegularizerKind.NONE:
        barrier = np.zeros_like(dual_obj)
    else:
        barrier = reg.mu * np.sum(np.log(out.zl) + np.log(out.zu), axis=-1)
    return LossValue(dual_obj + barrier, dual_obj, barrier), inst.b - out.x @ inst.A.T


def central_difference(f, y, h):
    """Central-difference gradient of a scalar function, step ``h`` (scalar or per-coordinate)."""
    y = np.asarray(y, dtype=np.float64)
    steps = np.broadcast_to(np.asarray(h, dtype=np.float64), y.shape)
    grad = np.empty_like(y)
    for i in range(y.size):
        e = np.zeros_like(y)
        e[i] = steps[i]
        grad[i] = (f(y + e) - f(y - e)) / (2.0 * steps[i])
    return grad


def finite_difference_check(inst: ParametricLpInstance, y, reg: Regularizer, h: float) -> float:
    """Largest componentwise relative error of ``s3l_grad_y`` against central differences.

    For ``mu = 0`` the loss is piecewise linear; a row ``i`` is skipped when
    the step could cross a kink, i.e. some ``z[j]`` touched by row ``i`` has
    ``|z[j]| < 10 h ||A||_inf``.
    """
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    y = np.asarray(y, dtype=np.float64)
    if inst.batched or y.ndim != 1:
        raise ValueError("finite_difference_check works on a single instance")
    g = s3l_grad_y(inst, y, reg)
    fd = central_difference(lambda t: float(s3l_loss(inst, t, reg).total), y, h)
    rows = np.ones(inst.m, dtype=bool)
    if reg.kind is RegularizerKind.NONE:
        z = inst.c - inst.A.T @ y
        near = np.abs(z) < 10.0 * h * np.abs(inst.A).sum(axis=1).max()
        rows = ~np.any((inst.A != 0.0) & near[None, :], axis=1)
    if not rows.any():
        return 0.0
    floor = 1e-8 * (1.0 + np.abs(inst.b).max())
    err = np.abs(fd - g) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), floor)
    return float(err[rows].max())
