"""Bounded-variable LP data model and primitive evaluations.

Primal::

    min  c'x   s.t.  A x = b,  l <= x <= u

Dual::

    max  b'y + l'zl - u'zu   s.t.  A'y + zl - zu = c,  zl, zu >= 0

Only the right-hand side ``b`` changes across a DCOPF family, so ``b`` may
carry a leading batch axis ``(k, m)``; every evaluation below broadcasts over
leading axes of ``y``/``b``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Array shapes are inconsistent with the instance."""


def pos(x):
    """Elementwise positive part ``max(0, x)``."""
    return np.maximum(x, 0.0)


def neg(x):
    """Elementwise negative part ``max(0, -x)``."""
    return np.maximum(-x, 0.0)


@dataclass(frozen=True, eq=False)
class ParametricLpInstance:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
            raise DimensionError(f"A must be a non-empty matrix, got shape {A.shape}")
        m, n = A.shape
        b = np.array(self.b, dtype=np.float64)
        c = np.array(self.c, dtype=np.float64).reshape(-1)
        l = np.array(self.l, dtype=np.float64).reshape(-1)
        u = np.array(self.u, dtype=np.float64).reshape(-1)
        if b.ndim == 0 or b.shape[-1] != m or b.ndim > 2:
            raise DimensionError(f"b must have trailing dimension {m}, got {b.shape}")
        for name, v in (("c", c), ("l", l), ("u", u)):
            if v.shape != (n,):
                raise DimensionError(f"{name} must have length {n}, got {v.shape}")
        for name, v in (("A", A), ("b", b), ("c", c), ("l", l), ("u", u)):
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} has non-finite entries")
        if not np.all(l < u):
            bad = np.flatnonzero(~(l < u))
            raise ValueError(f"bounds must satisfy l < u; violated at columns {bad[:10].tolist()}")
        zero_rows = np.flatnonzero(~np.any(A != 0.0, axis=1))
        if zero_rows.size:
            raise ValueError(f"A has all-zero rows {zero_rows[:10].tolist()}")
        for name, v in (("A", A), ("b", b), ("c", c), ("l", l), ("u", u)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def batched(self) -> bool:
        return self.b.ndim == 2

    def with_rhs(self, b) -> "ParametricLpInstance":
        """Same matrix, costs and bounds with a new right-hand side (or batch of them)."""
        return ParametricLpInstance(self.A, b, self.c, self.l, self.u)

    def sample(self, k: int) -> "ParametricLpInstance":
        """The k-th member of a batched family."""
        if not self.batched:
            raise ValueError("instance is not batched")
        return self.with_rhs(self.b[k])

    def scale(self) -> float:
        """``1 + max |data|``, the reference magnitude for relative tolerances."""
        return 1.0 + max(
            np.abs(self.b).max(), np.abs(self.c).max(), np.abs(self.l).max(), np.abs(self.u).max()
        )


@dataclass(frozen=True)
class DualPoint:
    y: np.ndarray
    zl: np.ndarray
    zu: np.ndarray


@dataclass(frozen=True)
class ResidualReport:
    eq_residual: np.ndarray
    zl_neg: np.ndarray
    zu_neg: np.ndarray
    linf: float


def _check_y(inst: ParametricLpInstance, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 0 or y.shape[-1] != inst.m:
        raise DimensionError(f"y must have trailing dimension {inst.m}, got {y.shape}")
    return y


def _check_x(inst: ParametricLpInstance, x, name="x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] != inst.n:
        raise DimensionError(f"{name} must have trailing dimension {inst.n}, got {x.shape}")
    return x


def reduced_costs(inst: ParametricLpInstance, y) -> np.ndarray:
    """``z = c - A'y``, broadcasting over leading axes of ``y``."""
    y = _check_y(inst, y)
    return inst.c - y @ inst.A


def dual_objective(inst: ParametricLpInstance, dp: DualPoint):
    """``b'y + l'zl - u'zu``. Defined whether or not ``dp`` is feasible."""
    y = _check_y(inst, dp.y)
    zl = _check_x(inst, dp.zl, "zl")
    zu = _check_x(inst, dp.zu, "zu")
    return np.sum(inst.b * y, axis=-1) + zl @ inst.l - zu @ inst.u


def primal_objective(inst: ParametricLpInstance, x):
    return _check_x(inst, x) @ inst.c


def dual_residuals(inst: ParametricLpInstance, dp: DualPoint) -> ResidualReport:
    y = _check_y(inst, dp.y)
    zl = _check_x(inst, dp.zl, "zl")
    zu = _check_x(inst, dp.zu, "zu")
    eq = y @ inst.A + zl - zu - inst.c
    zl_neg = neg(zl)
    zu_neg = neg(zu)
    linf = float(max(np.abs(eq).max(), zl_neg.max(), zu_neg.max()))
    return ResidualReport(eq, zl_neg, zu_neg, linf)


def is_dual_feasible(inst: ParametricLpInstance, dp: DualPoint, tol: float) -> bool:
    if tol < 0:
        raise ValueError("tol must be non-negative")
    return dual_residuals(inst, dp).linf <= tol
