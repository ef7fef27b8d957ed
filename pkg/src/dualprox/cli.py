"""Command line: ``dualprox gen-data|train|eval|bench|plot``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from dualprox import bench, reports
from dualprox.checkpoint import load_checkpoint, save_checkpoint
from dualprox.datasets import generate_dataset, load_split
from dualprox.dcopf_gen import GenerationError, load_case
from dualprox.experiment import RunAborted, evaluate_run, metrics_summary, run_training
from dualprox.ipm_oracle import OracleError
from dualprox.mlp import TrainConfig
from dualprox.storage import dumps_json

logger = logging.getLogger("dualprox")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

CHECKPOINT_NAME = "checkpoint.dpx"
MANIFEST_NAME = "manifest.json"
TIMINGS_NAME = "timings.json"


def parse_seeds(text: str) -> list:
    """``3``, ``0,2,5`` or an inclusive range ``0..9``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise ValueError(f"no seeds in {text!r}")
    return seeds


def read_config(path) -> dict:
    if path is None:
        return {}
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return data


def train_config(overrides: dict, seed: int) -> TrainConfig:
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(overrides) - known
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    return TrainConfig(**{**overrides, "seed": seed})


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj) + "\n")


def cmd_gen_data(args) -> int:
    net = load_case(args.case)
    cfg = {"split": 0.8, "global_range": [0.8, 1.2], "local_noise": 0.05, **read_config(args.config)}
    ds = generate_dataset(
        net,
        args.n_samples,
        args.seed,
        split=args.split if args.split is not None else cfg["split"],
        with_oracle=args.with_oracle,
        global_range=tuple(cfg["global_range"]),
        local_noise=cfg["local_noise"],
        workers=args.workers,
    )
    ds.save(args.output)
    print(f"wrote {args.output}: {ds.n_samples} samples, {len(ds.train_idx)} train / {len(ds.test_idx)} test")
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = read_config(args.config)
    overrides["method"] = args.method
    for key in ("epochs", "batch_size", "learning_rate", "mu0", "mu_decay"):
        val = getattr(args, key)
        if val is not None:
            overrides[key] = val
    out = Path(args.out)
    status = EXIT_OK
    for seed in parse_seeds(args.seeds):
        cfg = train_config(overrides, seed)
        run_dir = out / f"seed_{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        try:
            run = run_training(args.dataset, cfg)
        except RunAborted as exc:
            write_json(run_dir / MANIFEST_NAME, exc.manifest)
            logger.error("seed %d: %s", seed, exc)
            status = EXIT_NUMERICAL
            continue
        save_checkpoint(run_dir / CHECKPOINT_NAME, run.model, cfg)
        write_json(run_dir / MANIFEST_NAME, run.manifest)
        write_json(run_dir / TIMINGS_NAME, run.timings)
        last = run.manifest["history"][-1] if run.manifest["history"] else {}
        print(f"seed {seed}: {cfg.epochs} epochs in {run.timings['train_s']:.1f}s, final {dumps_json(last)}")
    return status


def checkpoint_paths(target) -> list:
    """A checkpoint file, a run directory, or a directory of ``seed_*`` run directories."""
    target = Path(target)
    if target.is_file():
        return [target]
    if (target / CHECKPOINT_NAME).is_file():
        return [target / CHECKPOINT_NAME]
    runs = sorted(target.glob(f"seed_*/{CHECKPOINT_NAME}"), key=lambda p: int(p.parent.name.split("_")[1]))
    if not runs:
        raise FileNotFoundError(f"no checkpoints under {target}")
    return runs


def cmd_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    named = []
    for path in checkpoint_paths(args.checkpoint):
        model, cfg = load_checkpoint(path)
        rec = evaluate_run(model, cfg, args.dataset, "test")
        label = path.parent.name if path.name == CHECKPOINT_NAME else path.stem
        reports.write_metrics_csv(out / f"metrics_{label}.csv", rec)
        named.append((label, cfg.method, metrics_summary(rec)))
    rows = reports.summary_rows(named)
    reports.write_summary_csv(out / "summary.csv", rows)
    print(reports.format_table(rows), end="")
    return EXIT_OK


def cmd_bench(args) -> int:
    model, cfg = load_checkpoint(checkpoint_paths(args.checkpoint)[0])
    split = load_split(args.dataset, "test")
    features = bench.tile_rows(split.features, args.batch)
    family = split.template.instance(features)
    report = {
        "proxy_vs_ipm": bench.bench_proxy(model, cfg, features, family, repeats=args.repeats),
        "completion": bench.bench_completion(n=args.n, batch=args.batch, repeats=args.repeats),
    }
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_plot(args) -> int:
    manifests = [json.loads(Path(p).read_text()) for p in args.manifests]
    rows = reports.curve_rows(manifests)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports.write_curves_csv(out / "curves.csv", rows)
    for p in reports.write_curve_charts(out, rows):
        print(f"wrote {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualprox", description="Dual optimization proxies for parametric LPs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="sample a parametric DCOPF dataset")
    g.add_argument("--case", required=True, help="bundled case name or MATPOWER file")
    g.add_argument("--n-samples", type=int, default=4000)
    g.add_argument("--split", type=float, default=None, help="training fraction (default 0.8)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--with-oracle", action="store_true", help="solve every sample with the interior-point oracle")
    g.add_argument("--workers", type=int, default=None)
    g.add_argument("--config", default=None, help="JSON with split, global_range, local_noise")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a dual proxy")
    t.add_argument("--dataset", required=True)
    t.add_argument("--method", choices=["s3l", "dll", "dc3", "penalty"], default="s3l")
    t.add_argument("--seeds", default="0", help="e.g. 0, 0,3 or 0..9")
    t.add_argument("--config", default=None, help="JSON object of training options")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--learning-rate", type=float, default=None)
    t.add_argument("--mu0", type=float, default=None)
    t.add_argument("--mu-decay", type=float, default=None)
    t.add_argument("--out", required=True, help="run directory; one seed_<s> folder per seed")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score checkpoints on the test split")
    e.add_argument("--checkpoint", required=True, help="checkpoint file or run directory")
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="relative timings")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--dataset", required=True)
    b.add_argument("--batch", type=int, default=1000)
    b.add_argument("--n", type=int, default=500, help="variables in the completion benchmark")
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)

    pl = sub.add_parser("plot", help="learning curves from run manifests")
    pl.add_argument("manifests", nargs="+")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (RunAborted, OracleError, GenerationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
