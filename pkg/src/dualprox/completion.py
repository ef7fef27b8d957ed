"""Closed-form dual completion.

Given ``y``, the completion subproblem

    max_{zl, zu >= 0}  l'zl - u'zu + mu * sum(ln zl + ln zu)
    s.t.               zl - zu = c - A'y

separates by coordinate. For ``mu = 0`` the optimum is the positive/negative
split of the reduced cost; for ``mu > 0`` each coordinate solves a quadratic
coming from the complementarity conditions ``(x - l) zl = mu`` and
``(u - x) zu = mu``. The multiplier ``x`` of the equality is returned as well:
it is what makes the loss gradient ``b - A x`` cheap.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from dualprox.lp_core import DimensionError, ParametricLpInstance, neg, pos, reduced_costs

TIE_RTOL = 1e-12


class RegularizerKind(enum.Enum):
    NONE = "none"
    LOG_BARRIER = "log_barrier"


@dataclass(frozen=True)
class Regularizer:
    kind: RegularizerKind
    mu: float = 0.0

    def __post_init__(self):
        if self.kind is RegularizerKind.NONE and self.mu != 0.0:
            raise ValueError("an unregularized completion must have mu == 0")
        if self.kind is RegularizerKind.LOG_BARRIER and not self.mu > 0.0:
            raise ValueError(f"log-barrier weight must be positive, got {self.mu}")

    @classmethod
    def from_mu(cls, mu: float) -> "Regularizer":
        """``mu == 0`` gives the plain completion, ``mu > 0`` the log barrier."""
        if mu < 0:
            raise ValueError(f"mu must be non-negative, got {mu}")
        if mu == 0:
            return cls(RegularizerKind.NONE, 0.0)
        return cls(RegularizerKind.LOG_BARRIER, float(mu))


NO_REG = Regularizer(RegularizerKind.NONE)


@dataclass(frozen=True)
class CompletionOutput:
    zl: np.ndarray
    zu: np.ndarray
    x: np.ndarray
    xi: np.ndarray  # scalar for a single y, shape (k,) for a batch


def _tie_threshold(inst: ParametricLpInstance, rtol: float) -> float:
    return rtol * (1.0 + np.abs(inst.c).max())


def complete_unregularized(inst: ParametricLpInstance, y) -> CompletionOutput:
    z = reduced_costs(inst, y)
    zl = pos(z)
    zu = neg(z)
    tau = _tie_threshold(inst, TIE_RTOL)
    mid = 0.5 * (inst.l + inst.u)
    x = np.where(z > tau, inst.l, np.where(z < -tau, inst.u, mid))
    xi = zl @ inst.l - zu @ inst.u
    return CompletionOutput(zl, zu, x, xi)


BLOCK_ROWS = 32


def complete_log_barrier(inst: ParametricLpInstance, y, mu: float) -> CompletionOutput:
    """Barrier completion, evaluated in cache-sized blocks of rows.

    With ``v = mu / (u - l)`` the two roots are ``v + |z|/2 +- sqrt(v^2 + z^2/4)``
    shifted so that their difference is ``|z|``. The smaller one is formed as
    ``v + 2 v^2 / (sqrt(4 v^2 + z^2) + |z|)``, free of cancellation, and the
    larger adds ``|z|``. The primal multiplier sits at distance ``mu / larger``
    from the bound on the side of the larger root, which keeps both
    ``x - l`` and ``u - x`` accurate; at ``z = 0`` it is the midpoint.
    """
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1:] != (inst.m,):
        raise DimensionError(f"y must end in dimension {inst.m}, got shape {y.shape}")
    lead = y.shape[:-1]
    Y = y.reshape(-1, inst.m)
    k, n = Y.shape[0], inst.n
    l, u, c = inst.l, inst.u, inst.c
    v = mu / (u - l)
    four_v2 = 4.0 * v * v
    two_v2 = 0.5 * four_v2
    zl = np.empty((k, n))
    zu = np.empty((k, n))
    x = np.empty((k, n))
    xi = np.empty(k)
    rows = max(1, min(BLOCK_ROWS, k))
    z, a, t, up = (np.empty((rows, n)) for _ in range(4))
    for s in range(0, k, rows):
        e = min(s + rows, k)
        zb, ab, small, ub = z[: e - s], a[: e - s], t[: e - s], up[: e - s]
        lo, hi, xb = zl[s:e], zu[s:e], x[s:e]
        np.matmul(Y[s:e], inst.A, out=zb)
        np.subtract(c, zb, out=zb)
        np.abs(zb, out=ab)
        np.multiply(ab, ab, out=small)
        small += four_v2
        np.sqrt(small, out=small)
        small += ab
        np.divide(two_v2, small, out=small)
        small += v
        np.maximum(zb, 0.0, out=lo)
        lo += small
        np.minimum(zb, 0.0, out=hi)
        np.subtract(small, hi, out=hi)
        big = ab
        big += small
        # blend by exact 0/1 weights: l + q where z >= 0, u - q elsewhere
        np.greater_equal(zb, 0.0, out=ub)
        q = np.divide(mu, big, out=zb)
        np.add(l, q, out=xb)
        xb *= ub
        np.subtract(q, u, out=q)
        ub -= 1.0
        q *= ub
        xb += q
        big *= small
        np.log(big, out=big)
        xi[s:e] = lo @ l - hi @ u + mu * big.sum(axis=-1)
    shape = lead + (n,)
    return CompletionOutput(zl.reshape(shape), zu.reshape(shape), x.reshape(shape), xi.reshape(lead)[()])


def complete(inst: ParametricLpInstance, y, reg: Regularizer) -> CompletionOutput:
    if reg.kind is RegularizerKind.NONE:
        return complete_unregularized(inst, y)
    return complete_log_barrier(inst, y, reg.mu)


def inner_value(inst: ParametricLpInstance, y, reg: Regularizer):
    return complete(inst, y, reg).xi


@dataclass(frozen=True)
class LimitReport:
    mus: np.ndarray
    deviations: np.ndarray  # one row per mu: (zl, zu, xi - mu*Phi)
    max_deviation: np.ndarray
    monotone: bool


def limit_consistency_check(inst: ParametricLpInstance, y, mu_sequence, slack: float = 0.1):
    """Track how fast the barrier completion approaches the plain one as mu shrinks.

    Coordinates with ``|z| <= tie threshold`` are left out of the value
    comparison only; their split ``zl = zu = 2 mu / (u - l)`` still enters the
    ``zl``/``zu`` deviations.
    """
    mus = np.asarray(mu_sequence, dtype=np.float64)
    if mus.ndim != 1 or mus.size == 0 or np.any(np.diff(mus) >= 0) or mus[-1] >= 1e-8 or mus[-1] <= 0:
        raise ValueError("mu_sequence must be positive, strictly decreasing and end below 1e-8")
    y = np.asarray(y, dtype=np.float64)
    z = reduced_costs(inst, y)
    keep = np.abs(z) > _tie_threshold(inst, TIE_RTOL)
    plain = complete_unregularized(inst, y)
    xi0 = plain.zl[keep] @ inst.l[keep] - plain.zu[keep] @ inst.u[keep]
    rows = []
    for mu in mus:
        out = complete_log_barrier(inst, y, mu)
        linear = out.zl[keep] @ inst.l[keep] - out.zu[keep] @ inst.u[keep]
        rows.append(
            (
                np.abs(out.zl - plain.zl).max(),
                np.abs(out.zu - plain.zu).max(),
                abs(linear - xi0),
            )
        )
    dev = np.array(rows)
    worst = dev.max(axis=1)
    monotone = bool(np.all(worst[1:] <= worst[:-1] * (1.0 + slack) + 1e-300))
    return LimitReport(mus, dev, worst, monotone)
