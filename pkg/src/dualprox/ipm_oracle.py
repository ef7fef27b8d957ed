"""Independent solvers used as ground truth.

* ``solve_lp``: Mehrotra predictor-corrector interior-point method for the
  bounded LP, normal equations with dense Cholesky.
* ``solve_inner`` / ``solve_inner_1d``: the completion subproblem solved
  numerically, coordinate by coordinate.
* ``solve_smoothed_dual``: damped Newton ascent on ``b'y + Xi_mu(y)``.

None of these call the closed-form completion for its answers, except
``solve_smoothed_dual`` which by design uses the closed-form gradient (its
purpose is to check that gradient's stationary point).
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from dualprox.completion import Regularizer, RegularizerKind, complete_log_barrier
from dualprox.lp_core import ParametricLpInstance, reduced_costs
from dualprox.loss_grad import s3l_loss_and_grad

logger = logging.getLogger(__name__)

TOL = 1e-9
MAX_ITER = 200


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITER = "max_iter"
    NUMERICAL_FAILURE = "numerical_failure"


class OracleError(RuntimeError):
    """An oracle failed to converge."""


@dataclass
class SolveResult:
    status: SolveStatus
    x: np.ndarray
    y: np.ndarray
    zl: np.ndarray
    zu: np.ndarray
    primal_obj: float
    dual_obj: float
    kkt_residual: float
    iterations: int


def _max_step(v, dv):
    """Largest alpha in (0, 1] keeping ``v + alpha dv`` non-negative."""
    mask = dv < 0
    if not mask.any():
        return 1.0
    return min(1.0, float(np.min(-v[mask] / dv[mask])))


def _factor(M):
    reg = 0.0
    scale = max(float(np.max(np.abs(np.diag(M)))), 1.0)
    for _ in range(6):
        try:
            return scipy.linalg.cho_factor(M + reg * np.eye(M.shape[0]), lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            reg = scale * (1e-14 if reg == 0.0 else reg / scale * 100.0)
    return None


def solve_lp(inst: ParametricLpInstance, tol: float = TOL, max_iter: int = MAX_ITER) -> SolveResult:
    """Primal-dual path-following solve of ``min c'x, Ax = b, l <= x <= u``."""
    if inst.batched:
        raise ValueError("solve_lp takes a single instance")
    A, b, c, l, u = inst.A, inst.b, inst.c, inst.l, inst.u
    m, n = A.shape
    width = u - l
    bnorm = 1.0 + np.abs(b).max()
    cnorm = 1.0 + np.abs(c).max()

    # Starting point: least-norm correction of the box midpoint, pushed inside.
    mid = 0.5 * (l + u)
    AAt = A @ A.T
    fac = _factor(AAt)
    if fac is None:
        raise OracleError("A A' is singular; A must have full row rank")
    x = mid + A.T @ scipy.linalg.cho_solve(fac, b - A @ mid)
    x = np.clip(x, l + 0.1 * width, u - 0.1 * width)
    y = scipy.linalg.cho_solve(fac, A @ c)
    z = c - A.T @ y
    shift = max(0.1 * np.abs(z).max(), 1.0)
    zl = np.maximum(z, 0.0) + shift
    zu = np.maximum(-z, 0.0) + shift

    status = SolveStatus.MAX_ITER
    it = 0
    kkt = np.inf
    for it in range(1, max_iter + 1):
        s1 = x - l
        s2 = u - x
        rp = b - A @ x
        rd = c - A.T @ y - zl + zu
        mu = (s1 @ zl + s2 @ zu) / (2 * n)
        pobj = c @ x
        dobj = b @ y + l @ zl - u @ zu
        kkt = max(np.abs(rp).max() / bnorm, np.abs(rd).max() / cnorm)
        gap = abs(pobj - dobj) / (1.0 + abs(pobj))
        if kkt <= tol and gap <= tol:
            status = SolveStatus.OPTIMAL
            break

        if s1.min() <= 0.0 or s2.min() <= 0.0 or zl.min() <= 0.0 or zu.min() <= 0.0:
            # Iterates collapsed onto the boundary, typically an infeasible LP.
            status = SolveStatus.NUMERICAL_FAILURE
            break
        dinv = zl / s1 + zu / s2
        d = 1.0 / dinv
        fac = _factor((A * d) @ A.T)
        if fac is None:
            status = SolveStatus.NUMERICAL_FAILURE
            break

        def direction(rl, ru):
            rho = rd - rl / s1 + ru / s2
            dy = scipy.linalg.cho_solve(fac, rp + A @ (d * rho))
            dx = d * (A.T @ dy - rho)
            dzl = (rl - zl * dx) / s1
            dzu = (ru + zu * dx) / s2
            return dx, dy, dzl, dzu

        # Predictor.
        dx, dy, dzl, dzu = direction(-s1 * zl, -s2 * zu)
        ap = min(_max_step(s1, dx), _max_step(s2, -dx))
        ad = min(_max_step(zl, dzl), _max_step(zu, dzu))
        mu_aff = ((s1 + ap * dx) @ (zl + ad * dzl) + (s2 - ap * dx) @ (zu + ad * dzu)) / (2 * n)
        sigma = (mu_aff / mu) ** 3

        # Corrector.
        rl = sigma * mu - s1 * zl - dx * dzl
        ru = sigma * mu - s2 * zu + dx * dzu
        dx, dy, dzl, dzu = direction(rl, ru)
        eta = max(0.9, 1.0 - 10.0 * mu / (1.0 + abs(pobj)))
        eta = min(eta, 0.9999)
        ap = min(1.0, eta * min(_max_step(s1, dx), _max_step(s2, -dx)))
        ad = min(1.0, eta * min(_max_step(zl, dzl), _max_step(zu, dzu)))
        x = x + ap * dx
        y = y + ad * dy
        zl = zl + ad * dzl
        zu = zu + ad * dzu
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.isfinite(zl @ zl + zu @ zu)):
            status = SolveStatus.NUMERICAL_FAILURE
            break

    pobj = float(c @ x)
    dobj = float(b @ y + l @ zl - u @ zu)
    if status is not SolveStatus.OPTIMAL:
        logger.debug("solve_lp stopped with %s after %d iterations (kkt %.2e)", status, it, kkt)
    return SolveResult(status, x, y, zl, zu, pobj, dobj, float(kkt), it)


def solve_inner_1d(l: float, u: float, mu: float, z: float):
    """Barrier completion of a single coordinate by safeguarded Newton.

    Maximizes ``l t - u (t - z) + mu (ln t + ln (t - z))`` over
    ``t > max(0, z)``. Writing ``g`` for the smaller of ``t`` and ``t - z``,
    stationarity reads ``mu/g + mu/(g + |z|) = u - l``; the root lies in
    ``(0, 2 mu / (u - l)]`` and the residual is convex and decreasing in ``g``.
    Returns ``(zl, zu)``.
    """
    if not l < u:
        raise ValueError("need l < u")
    if not mu > 0:
        raise ValueError("need mu > 0")
    w = u - l
    a = abs(z)
    lo, hi = 0.0, 2.0 * mu / w
    g = 0.5 * hi
    for _ in range(200):
        f = mu / g + mu / (g + a) - w
        if f > 0:
            lo = g
        else:
            hi = g
        if abs(f) <= 1e-14 * w or hi - lo <= 4e-16 * hi:
            break
        df = -mu / (g * g) - mu / ((g + a) * (g + a))
        step = g - f / df
        g = step if lo < step < hi else 0.5 * (lo + hi)
    big = g + a
    return (big, g) if z >= 0 else (g, big)


def solve_inner(inst: ParametricLpInstance, y, reg: Regularizer):
    """Numerical solve of the completion subproblem for one ``y``; returns ``(zl, zu, xi)``."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or inst.batched:
        raise ValueError("solve_inner works on a single instance and a single y")
    z = reduced_costs(inst, y)
    n = inst.n
    zl = np.empty(n)
    zu = np.empty(n)
    terms = []
    for j in range(n):
        lj, uj, zj = float(inst.l[j]), float(inst.u[j]), float(z[j])
        if reg.kind is RegularizerKind.NONE:
            best = None
            for t, s in ((zj, 0.0), (0.0, -zj)):
                if t >= 0.0 and s >= 0.0:
                    val = lj * t - uj * s
                    if best is None or val > best[0]:
                        best = (val, t, s)
            _, zl[j], zu[j] = best
        else:
            zl[j], zu[j] = solve_inner_1d(lj, uj, reg.mu, zj)
            terms.append(reg.mu * math.log(zl[j]))
            terms.append(reg.mu * math.log(zu[j]))
        terms.append(lj * zl[j])
        terms.append(-uj * zu[j])
    return zl, zu, math.fsum(terms)


def _barrier_hessian_diag(out, inst):
    """``dx/dz`` for the barrier completion, from the differentiated complementarity conditions."""
    return -1.0 / (out.zl / (out.x - inst.l) + out.zu / (inst.u - out.x))


def solve_smoothed_dual(
    inst: ParametricLpInstance,
    mu: float,
    y0=None,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> np.ndarray:
    """Maximize ``b'y + Xi_mu(y)`` by damped Newton with mu-continuation.

    The Hessian is ``A diag(dx/dz) A'`` with ``dx/dz`` obtained by
    differentiating ``(x - l) zl = mu``, ``(u - x) zu = mu``, ``zl - zu = z``.
    Converged when ``||grad||_inf <= tol (1 + ||b||_inf)``.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    if inst.batched:
        raise ValueError("solve_smoothed_dual takes a single instance")
    A, b = inst.A, inst.b
    y = np.zeros(inst.m) if y0 is None else np.array(y0, dtype=np.float64)
    gtol = tol * (1.0 + np.abs(b).max())
    # Continuation from a well-conditioned barrier weight down to the target.
    stages = []
    cur = max(mu, min(1.0, inst.scale()))
    while cur > mu * 1.0000001:
        stages.append(cur)
        cur /= 10.0
    stages.append(mu)
    total = 0
    for stage_mu in stages:
        reg = Regularizer.from_mu(stage_mu)
        stage_tol = gtol if stage_mu == mu else max(gtol, 1e-6 * (1.0 + np.abs(b).max()))
        for _ in range(max_iter):
            total += 1
            val, g = s3l_loss_and_grad(inst, y, reg)
            if np.abs(g).max() <= stage_tol:
                break
            out = complete_log_barrier(inst, y, stage_mu)
            dxdz = _barrier_hessian_diag(out, inst)
            H = (A * dxdz) @ A.T  # negative definite
            try:
                step = np.linalg.solve(H - 1e-14 * np.abs(np.diag(H)).max() * np.eye(inst.m), -g)
            except np.linalg.LinAlgError:
                step = g
            if not np.all(np.isfinite(step)) or g @ step <= 0:
                step = g
            t = 1.0
            f0 = float(val.total)
            slope = float(g @ step)
            if slope <= 1e-13 * (1.0 + abs(f0)):
                # Predicted gain is below the resolution of f: judge the full
                # Newton step by the gradient instead.
                g1 = s3l_loss_and_grad(inst, y + step, reg)[1]
                if np.abs(g1).max() >= np.abs(g).max():
                    break
                y = y + step
                continue
            while t > 1e-20:
                f1 = float(s3l_loss_and_grad(inst, y + t * step, reg)[0].total)
                if f1 >= f0 + 1e-4 * t * slope:
                    break
                t *= 0.5
            if t <= 1e-20:
                # Line search stalls only at the floating-point resolution of f.
                break
            y = y + t * step
        else:
            raise OracleError(f"smoothed dual did not converge at mu={stage_mu} after {max_iter} iterations")
    g = s3l_loss_and_grad(inst, y, Regularizer.from_mu(mu))[1]
    if np.abs(g).max() > gtol:
        raise OracleError(f"smoothed dual stalled with gradient {np.abs(g).max():.3e} > {gtol:.3e}")
    logger.debug("solve_smoothed_dual converged in %d Newton steps", total)
    return y
