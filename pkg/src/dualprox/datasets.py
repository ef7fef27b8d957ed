"""Parametric DCOPF datasets: generation, oracle labelling, and file round-trip."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from dualprox.dcopf_gen import (
    DcopfTemplate,
    GenerationError,
    PowerNetwork,
    build_template,
    sample_demand,
)
from dualprox.ipm_oracle import SolveStatus, solve_lp
from dualprox.mlp import TrainingSet
from dualprox.storage import read_container, write_container

logger = logging.getLogger(__name__)

DATASET_FORMAT = 1
STATUS_CODES = {SolveStatus.OPTIMAL: 0, SolveStatus.MAX_ITER: 1, SolveStatus.NUMERICAL_FAILURE: 2}
NO_ORACLE = -1
VALIDATION_FRACTION = 0.1
MAX_FAILURES = 10
WORKERS_ENV = "DUALPROX_WORKERS"


def worker_count() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True, eq=False)
class OracleBlock:
    lstar: np.ndarray
    x: np.ndarray
    y: np.ndarray
    status: np.ndarray


@dataclass(eq=False)
class Dataset:
    network: PowerNetwork
    beta: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    settings: dict
    oracle: Optional[OracleBlock] = None

    @property
    def n_samples(self) -> int:
        return self.beta.shape[0]

    def template(self) -> DcopfTemplate:
        return build_template(self.network)

    def header(self) -> dict:
        tpl = self.template()
        return {
            "format_version": DATASET_FORMAT,
            "network": self.network.to_dict(),
            "network_fingerprint": self.network.fingerprint(),
            "n_samples": int(self.n_samples),
            "n_bus": int(self.beta.shape[1]),
            "m": int(tpl.base.m),
            "n": int(tpl.base.n),
            "settings": self.settings,
            "with_oracle": self.oracle is not None,
        }

    def save(self, path) -> None:
        arrays = {"beta": self.beta, "train_idx": self.train_idx, "test_idx": self.test_idx}
        if self.oracle is not None:
            arrays.update(
                oracle_lstar=self.oracle.lstar,
                oracle_x=self.oracle.x,
                oracle_y=self.oracle.y,
                oracle_status=self.oracle.status,
            )
        write_container(path, "dataset", self.header(), arrays)

    @classmethod
    def load(cls, path) -> "Dataset":
        meta, arrays = read_container(path, kind="dataset")
        _check_format(meta)
        oracle = None
        if meta["with_oracle"]:
            oracle = OracleBlock(
                arrays["oracle_lstar"], arrays["oracle_x"], arrays["oracle_y"], arrays["oracle_status"]
            )
        return cls(
            PowerNetwork.from_dict(meta["network"]),
            arrays["beta"],
            arrays["train_idx"],
            arrays["test_idx"],
            meta["settings"],
            oracle,
        )


def _check_format(meta):
    if meta.get("format_version") != DATASET_FORMAT:
        raise ValueError(f"unsupported dataset format {meta.get('format_version')}")


def _solve_sample(args):
    template, beta = args
    res = solve_lp(template.instance(beta))
    return res.status, res.primal_obj, res.x, res.y


def _solve_all(template, betas, workers):
    jobs = [(template, b) for b in betas]
    if workers <= 1 or len(jobs) < 2:
        return [_solve_sample(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_solve_sample, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def split_indices(n_samples: int, split: float, seed: int):
    if not 0.0 < split < 1.0:
        raise ValueError("split must lie strictly between 0 and 1")
    perm = np.random.default_rng(np.random.SeedSequence([seed, 2])).permutation(n_samples)
    n_train = int(round(split * n_samples))
    return perm[:n_train].astype(np.int64), perm[n_train:].astype(np.int64)


def generate_dataset(
    net: PowerNetwork,
    n_samples: int,
    seed: int,
    split: float = 0.8,
    with_oracle: bool = True,
    global_range=(0.8, 1.2),
    local_noise: float = 0.05,
    workers: Optional[int] = None,
) -> Dataset:
    """Sample demands and, optionally, label each with its LP optimum.

    A sample whose solve does not reach optimality is redrawn from a fresh
    sub-seed; more than ``MAX_FAILURES`` such events abort generation.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    workers = worker_count() if workers is None else workers
    template = build_template(net)

    def draw(i, attempt):
        ss = np.random.SeedSequence([seed, i] if attempt == 0 else [seed, i, attempt])
        return sample_demand(net, ss, global_range, local_noise, sample_id=i).beta

    betas = np.array([draw(i, 0) for i in range(n_samples)])
    train_idx, test_idx = split_indices(n_samples, split, seed)
    settings = {
        "seed": int(seed),
        "split": float(split),
        "global_range": [float(global_range[0]), float(global_range[1])],
        "local_noise": float(local_noise),
    }
    if not with_oracle:
        return Dataset(net, betas, train_idx, test_idx, settings)

    n = template.base.n
    m = template.base.m
    lstar = np.zeros(n_samples)
    xs = np.zeros((n_samples, n))
    ys = np.zeros((n_samples, m))
    status = np.full(n_samples, NO_ORACLE, dtype=np.int64)
    pending = list(range(n_samples))
    attempts = np.zeros(n_samples, dtype=int)
    failures = 0
    while pending:
        results = _solve_all(template, betas[pending], workers)
        retry = []
        for i, (st, obj, x, y) in zip(pending, results):
            if st is SolveStatus.OPTIMAL:
                lstar[i], xs[i], ys[i], status[i] = obj, x, y, STATUS_CODES[st]
                continue
            failures += 1
            logger.warning("sample %d: oracle returned %s; redrawing", i, st.value)
            if failures > MAX_FAILURES:
                raise GenerationError(f"more than {MAX_FAILURES} oracle failures while generating data")
            attempts[i] += 1
            betas[i] = draw(i, attempts[i])
            retry.append(i)
        pending = retry
    return Dataset(net, betas, train_idx, test_idx, settings, OracleBlock(lstar, xs, ys, status))


def validation_split(train_idx):
    """Last 10% of the (shuffled) training indices are held out for learning curves."""
    n_val = max(1, int(round(VALIDATION_FRACTION * len(train_idx)))) if len(train_idx) > 1 else 0
    cut = len(train_idx) - n_val
    return train_idx[:cut], train_idx[cut:]


@dataclass(frozen=True, eq=False)
class SplitData:
    """Parameters of a subset of samples, without any oracle information."""

    template: DcopfTemplate
    indices: np.ndarray
    features: np.ndarray

    def family(self):
        return self.template.instance(self.features)

    def training_set(self) -> TrainingSet:
        return TrainingSet(self.features, self.family())


def load_split(path, which: str) -> SplitData:
    """Load ``train``, ``val`` or ``test`` features. Oracle arrays are never read."""
    meta, arrays = read_container(path, names={"beta", "train_idx", "test_idx"}, kind="dataset")
    _check_format(meta)
    net = PowerNetwork.from_dict(meta["network"])
    fit, val = validation_split(arrays["train_idx"])
    idx = {"train": fit, "val": val, "test": arrays["test_idx"]}[which]
    return SplitData(build_template(net), idx, arrays["beta"][idx])


def has_oracle(path) -> bool:
    meta, _ = read_container(path, names=set(), kind="dataset")
    return bool(meta["with_oracle"])


def load_optimal_values(path, indices) -> np.ndarray:
    meta, arrays = read_container(path, names={"oracle_lstar", "oracle_status"}, kind="dataset")
    if not meta["with_oracle"]:
        raise ValueError("dataset was generated without oracle solutions")
    st = arrays["oracle_status"][indices]
    if np.any(st != STATUS_CODES[SolveStatus.OPTIMAL]):
        raise ValueError("dataset lacks optimal oracle values for some requested samples")
    return arrays["oracle_lstar"][indices]
