"""Relative timings: learned proxy versus interior-point solves, closed-form versus numerical completion."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from dualprox.completion import Regularizer, complete_log_barrier, complete_unregularized
from dualprox.ipm_oracle import solve_inner, solve_lp
from dualprox.lp_core import ParametricLpInstance
from dualprox.mlp import MlpModel, TrainConfig, forward


@dataclass
class Timing:
    median_s: float
    runs: list


def time_call(fn, repeats: int = 5, warmup: int = 1) -> Timing:
    for _ in range(warmup):
        fn()
    runs = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        runs.append(time.perf_counter() - t)
    return Timing(statistics.median(runs), runs)


def random_completion_case(n: int = 500, m: int = 100, batch: int = 1000, seed: int = 0):
    """A dense bounded LP and a batch of dual guesses for the completion benchmark."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(m, n))
    l = rng.uniform(-2.0, 0.0, n)
    u = l + rng.uniform(0.5, 3.0, n)
    inst = ParametricLpInstance(A, rng.normal(size=m), rng.normal(size=n), l, u)
    return inst, rng.normal(size=(batch, m))


def bench_completion(
    n: int = 500, batch: int = 1000, mu: float = 1.0, repeats: int = 5, oracle_rows: int | None = None, seed: int = 0
) -> dict:
    """Batched closed form against the per-coordinate numerical solve, per ``batch`` rows.

    ``oracle_rows`` limits how many rows the slow oracle actually solves; its
    time is scaled linearly to ``batch``.
    """
    inst, ys = random_completion_case(n=n, batch=batch, seed=seed)
    reg = Regularizer.from_mu(mu)
    rows = batch if oracle_rows is None else min(batch, oracle_rows)
    closed = time_call(lambda: complete_log_barrier(inst, ys, mu), repeats)

    def oracle():
        for k in range(rows):
            solve_inner(inst, ys[k], reg)

    slow = time_call(oracle, repeats)
    slow_s = slow.median_s * batch / rows
    return {
        "n": n,
        "batch": batch,
        "mu": mu,
        "closed_form_s": closed.median_s,
        "numerical_s": slow_s,
        "ratio": slow_s / closed.median_s,
    }


def proxy_inference(model: MlpModel, features, family: ParametricLpInstance):
    """Forward pass and unregularized completion: the deployed S3L/DLL path."""
    out, _ = forward(model, features)
    return complete_unregularized(family, out.y)


def bench_proxy(model: MlpModel, cfg: TrainConfig, features, family: ParametricLpInstance, repeats: int = 5) -> dict:
    """Proxy inference on the whole batch against one ``solve_lp`` per instance."""
    features = np.asarray(features)
    k = features.shape[0]
    proxy = time_call(lambda: proxy_inference(model, features, family), repeats)
    singles = [family.with_rhs(family.b[i]) for i in range(k)]

    def solve_all():
        for inst in singles:
            solve_lp(inst)

    ipm = time_call(solve_all, repeats)
    return {
        "batch": k,
        "method": cfg.method,
        "proxy_s": proxy.median_s,
        "ipm_s": ipm.median_s,
        "ratio": ipm.median_s / proxy.median_s,
    }


def tile_rows(arr, batch: int):
    """Repeat rows cyclically to reach exactly ``batch`` rows."""
    arr = np.asarray(arr)
    reps = -(-batch // arr.shape[0])
    return np.concatenate([arr] * reps, axis=0)[:batch]
