"""Model checkpoints: dims, head, weights, feature statistics and training config."""

from __future__ import annotations

import numpy as np

from dualprox.mlp import Head, MlpModel, TrainConfig
from dualprox.storage import read_container, write_container

CHECKPOINT_FORMAT = 1


def save_checkpoint(path, model: MlpModel, cfg: TrainConfig) -> None:
    arrays = {"feature_mean": model.feature_mean, "feature_std": model.feature_std}
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"W{k}"] = W
        arrays[f"b{k}"] = b
    if model.y_scale is not None:
        arrays["y_scale"] = model.y_scale
    meta = {
        "format_version": CHECKPOINT_FORMAT,
        "head": model.head.value,
        "m": model.m,
        "n": model.n,
        "input_dim": model.input_dim,
        "hidden_dim": model.hidden_dim,
        "n_layers": len(model.weights),
        "config": cfg.to_dict(),
    }
    write_container(path, "checkpoint", meta, arrays)


def load_checkpoint(path):
    meta, arrays = read_container(path, kind="checkpoint")
    if meta.get("format_version") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {meta.get('format_version')}")
    L = meta["n_layers"]
    model = MlpModel(
        [arrays[f"W{k}"] for k in range(L)],
        [arrays[f"b{k}"] for k in range(L)],
        Head(meta["head"]),
        meta["m"],
        meta["n"],
        arrays["feature_mean"],
        arrays["feature_std"],
        arrays.get("y_scale"),
    )
    return model, TrainConfig(**meta["config"])
