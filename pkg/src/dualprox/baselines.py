"""Comparison methods that predict infeasible-capable dual points.

Penalty predicts ``(y, zl, zu)`` and penalizes dual infeasibility. DC3
predicts ``(y, zl)``, recovers ``zu`` from the equality, then runs a few
momentum gradient steps on the squared sign violations; the training
gradient is propagated through those unrolled steps by hand.

All functions are batched over a leading sample axis and return gradients
of the *per-sample* objective; the caller averages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dualprox.lp_core import DualPoint, ParametricLpInstance, dual_objective, neg

SMOOTH_EPS = 1e-8


@dataclass(frozen=True)
class PenaltyLossValue:
    dual_obj: np.ndarray
    violation: np.ndarray
    total: np.ndarray


def smooth_abs(t, eps=SMOOTH_EPS):
    return np.sqrt(t * t + eps * eps)


def penalty_violation(inst: ParametricLpInstance, dp: DualPoint):
    """Mean smoothed equality residual plus mean negative parts of ``zl``, ``zu``."""
    r = np.asarray(dp.y) @ inst.A + dp.zl - dp.zu - inst.c
    return (
        smooth_abs(r).mean(axis=-1) + neg(dp.zl).mean(axis=-1) + neg(dp.zu).mean(axis=-1)
    )


def penalty_loss(inst: ParametricLpInstance, dp: DualPoint, weight: float) -> PenaltyLossValue:
    if weight < 0:
        raise ValueError("penalty weight must be non-negative")
    obj = dual_objective(inst, dp)
    viol = penalty_violation(inst, dp)
    return PenaltyLossValue(obj, viol, obj - weight * viol)


def penalty_grads(inst: ParametricLpInstance, dp: DualPoint, weight: float):
    """Gradients of ``total`` with respect to ``(y, zl, zu)``."""
    n = inst.n
    r = np.asarray(dp.y) @ inst.A + dp.zl - dp.zu - inst.c
    dr = r / smooth_abs(r) / n
    dzl_v = dr - (dp.zl < 0) / n
    dzu_v = -dr - (dp.zu < 0) / n
    gy = inst.b - weight * (dr @ inst.A.T)
    gzl = inst.l - weight * dzl_v
    gzu = -inst.u - weight * dzu_v
    return np.broadcast_to(gy, np.shape(dp.y)).copy(), gzl, gzu


def dc3_complete(inst: ParametricLpInstance, y, zl) -> np.ndarray:
    """The unique ``zu`` satisfying the dual equality; may be negative."""
    return np.asarray(y) @ inst.A + zl - inst.c


def _violation_grad(inst, y, zl):
    zu = dc3_complete(inst, y, zl)
    mu_ = np.minimum(zu, 0.0)
    ml = np.minimum(zl, 0.0)
    return mu_ @ inst.A.T, mu_ + ml, zu


def _violation_hvp(inst, y, zl, dy, dzl):
    zu = dc3_complete(inst, y, zl)
    dm_u = (zu < 0) * (dy @ inst.A + dzl)
    dm_l = (zl < 0) * dzl
    return dm_u @ inst.A.T, dm_u + dm_l


def squared_violation(inst, y, zl):
    zu = dc3_complete(inst, y, zl)
    return 0.5 * np.sum(np.minimum(zu, 0.0) ** 2, axis=-1) + 0.5 * np.sum(np.minimum(zl, 0.0) ** 2, axis=-1)


@dataclass
class Dc3State:
    """Trajectory of one correction run, kept for the backward pass."""

    ys: list
    zls: list
    steps: int
    lr: float
    momentum: float

    @property
    def y(self):
        return self.ys[-1]

    @property
    def zl(self):
        return self.zls[-1]


def dc3_correct(inst: ParametricLpInstance, y, zl, zu=None, steps=10, lr=1e-2, momentum=0.5):
    """Momentum descent on ``0.5 ||min(zu, 0)||^2 + 0.5 ||min(zl, 0)||^2`` over ``(y, zl)``.

    ``zu`` is re-derived from the equality after every step (any ``zu`` passed
    in is ignored for that reason). Returns ``(y, zl, zu, state)``.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    y = np.array(y, dtype=np.float64)
    zl = np.array(zl, dtype=np.float64)
    vy = np.zeros_like(y)
    vz = np.zeros_like(zl)
    ys, zls = [y], [zl]
    for _ in range(steps):
        gy, gz, _ = _violation_grad(inst, y, zl)
        vy = momentum * vy - lr * gy
        vz = momentum * vz - lr * gz
        y = y + vy
        zl = zl + vz
        ys.append(y)
        zls.append(zl)
    return y, zl, dc3_complete(inst, y, zl), Dc3State(ys, zls, steps, lr, momentum)


def dc3_backward(inst: ParametricLpInstance, state: Dc3State, gy, gzl):
    """Pull gradients on the corrected ``(y, zl)`` back to the predicted ones."""
    ay = np.array(gy, dtype=np.float64)
    az = np.array(gzl, dtype=np.float64)
    avy = np.zeros_like(ay)
    avz = np.zeros_like(az)
    for k in range(state.steps - 1, -1, -1):
        # s_{k+1} = s_k + v_{k+1};  v_{k+1} = momentum v_k - lr grad(s_k)
        wy = avy + ay
        wz = avz + az
        hy, hz = _violation_hvp(inst, state.ys[k], state.zls[k], wy, wz)
        ay = ay - state.lr * hy
        az = az - state.lr * hz
        avy = state.momentum * wy
        avz = state.momentum * wz
    return ay, az


def dc3_objective(inst: ParametricLpInstance, y, zl, weight: float):
    """Dual objective minus weighted mean sign violation, with ``zu`` eliminated.

    Returns ``(PenaltyLossValue, grad_y, grad_zl)``.
    """
    zu = dc3_complete(inst, y, zl)
    n = inst.n
    obj = np.sum(inst.b * y, axis=-1) + zl @ inst.l - zu @ inst.u
    viol = neg(zl).mean(axis=-1) + neg(zu).mean(axis=-1)
    # d/dzu of the total, then chain through zu = A'y + zl - c.
    gzu = -inst.u + weight * (zu < 0) / n
    gzl = inst.l + weight * (zl < 0) / n + gzu
    gy = inst.b + gzu @ inst.A.T
    return PenaltyLossValue(obj, viol, obj - weight * viol), gy, gzl
