"""Training runs end to end: model setup, manifests and test-set evaluation.

A run is fully determined by its dataset file and ``TrainConfig``. Wall-clock
timings are returned separately so that manifests of repeated runs compare
byte for byte.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from dualprox.datasets import SplitData, has_oracle, load_optimal_values, load_split
from dualprox.ipm_oracle import OracleError, SolveStatus, solve_lp
from dualprox.metrics import MetricsRecord, evaluate_model, make_validator
from dualprox.mlp import (
    MlpModel,
    TrainConfig,
    TrainingDivergence,
    TrainResult,
    feature_stats,
    init_model,
    predict_dual,
    train,
)
from dualprox.storage import file_digest

logger = logging.getLogger(__name__)

MANIFEST_FORMAT = 1
SCALING_SAMPLES = 100


def output_scale(split: SplitData, n_samples: int = SCALING_SAMPLES) -> np.ndarray:
    """Per-coordinate std of optimal ``y`` on the first training samples, solved afresh."""
    fam = split.family()
    ys = []
    for k in range(min(n_samples, len(split.indices))):
        res = solve_lp(fam.with_rhs(fam.b[k]))
        if res.status is not SolveStatus.OPTIMAL:
            raise OracleError(f"warm-up solve {k} returned {res.status.value}")
        ys.append(res.y)
    std = np.std(np.array(ys), axis=0)
    return np.where(std > 1e-9 * (1.0 + np.max(std)), std, 1.0)


def build_model(split: SplitData, cfg: TrainConfig) -> MlpModel:
    fam = split.family()
    mean, std = feature_stats(split.features)
    y_scale = output_scale(split) if cfg.output_scaling else None
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    return init_model(
        split.features.shape[1],
        fam.m,
        fam.n,
        cfg.method_enum.head,
        rng,
        hidden_dim=cfg.hidden_dim,
        feature_mean=mean,
        feature_std=std,
        y_scale=y_scale,
    )


class RunAborted(RuntimeError):
    """Training diverged; ``manifest`` holds the history up to the failure."""

    def __init__(self, manifest: dict, cause: Exception):
        super().__init__(str(cause))
        self.manifest = manifest


@dataclass
class RunOutput:
    model: MlpModel
    manifest: dict
    timings: dict


def run_training(dataset_path, cfg: TrainConfig, callbacks: tuple = ()) -> RunOutput:
    """Train on the training slice; learning curves use the held-out validation slice."""
    t0 = time.perf_counter()
    fit = load_split(dataset_path, "train")
    val = load_split(dataset_path, "val")
    model = build_model(fit, cfg)
    validate = None
    if len(val.indices) and has_oracle(dataset_path):
        validate = make_validator(val.features, val.family(), load_optimal_values(dataset_path, val.indices), cfg)
    seen = []
    t1 = time.perf_counter()
    try:
        result: TrainResult = train(
            model, fit.training_set(), cfg, validate, (lambda e, rec, m: seen.append(rec),) + tuple(callbacks)
        )
    except TrainingDivergence as exc:
        raise RunAborted(make_manifest(dataset_path, cfg, seen, status=f"diverged: {exc}"), exc) from exc
    t2 = time.perf_counter()
    manifest = make_manifest(dataset_path, cfg, result.history)
    timings = {"setup_s": t1 - t0, "train_s": t2 - t1, "epochs": len(result.history)}
    return RunOutput(result.model, manifest, timings)


def make_manifest(dataset_path, cfg: TrainConfig, history: list, status: str = "completed") -> dict:
    return {
        "format_version": MANIFEST_FORMAT,
        "status": status,
        "seed": cfg.seed,
        "method": cfg.method,
        "config": cfg.to_dict(),
        "dataset_sha256": file_digest(dataset_path),
        "history": history,
    }


def evaluate_run(model: MlpModel, cfg: TrainConfig, dataset_path, which: str = "test") -> MetricsRecord:
    split = load_split(dataset_path, which)
    lstar = load_optimal_values(dataset_path, split.indices)
    return evaluate_model(
        lambda f, fam: predict_dual(model, f, fam, cfg),
        split.features,
        split.family(),
        lstar,
        split.indices,
    )


def metrics_summary(rec: MetricsRecord) -> dict:
    """Scalar columns in the reporting order G*, G*max, V, dG."""
    return {
        "gstar_mean": rec.gstar_mean,
        "gstar_max": rec.gstar_max,
        "v_mean": rec.v_mean,
        "dgap_mean": rec.dgap_mean,
        "n_undefined": rec.n_undefined,
    }
