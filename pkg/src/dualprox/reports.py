"""CSV tables and learning-curve charts built from metrics and run manifests."""

from __future__ import annotations

import csv
import io
import logging
import math
from pathlib import Path

import numpy as np

from dualprox.metrics import MetricsRecord
from dualprox.svgplot import line_chart

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["gstar_mean", "gstar_max", "v_mean", "dgap_mean"]
SUMMARY_HEADERS = ["G* (%)", "G*max (%)", "V", "dG (%)"]
CURVE_COLUMNS = ["method", "seed", "epoch", "mu", "mean_gstar", "max_gstar"]


def _fmt(v) -> str:
    return repr(float(v))


def write_metrics_csv(path, rec: MetricsRecord) -> None:
    """One row per sample, then a summary row with sample id ``mean``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "v", "dgap", "gstar", "v_sum", "v_linf", "bound", "lstar"])
        ex = rec.extras
        for k, (sid, v, dg, gs) in enumerate(rec.per_sample):
            w.writerow(
                [sid, _fmt(v), _fmt(dg), _fmt(gs)]
                + [_fmt(ex[key][k]) for key in ("v_sum", "v_linf", "bound", "lstar")]
            )
        w.writerow(["mean", _fmt(rec.v_mean), _fmt(rec.dgap_mean), _fmt(rec.gstar_mean), "", "", "", ""])


def summary_rows(named: list) -> list:
    """``named`` is a list of ``(label, method, summary dict)``; a mean row is appended when there are several."""
    rows = [[label, method] + [s[c] for c in SUMMARY_COLUMNS] for label, method, s in named]
    if len(named) > 1:
        for method in sorted({m for _, m, _ in named}):
            sel = [s for _, m, s in named if m == method]
            rows.append(["mean", method] + [float(np.mean([s[c] for s in sel])) for c in SUMMARY_COLUMNS])
    return rows


def write_summary_csv(path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "method"] + SUMMARY_COLUMNS)
        for r in rows:
            w.writerow(r[:2] + [_fmt(v) for v in r[2:]])


def format_table(rows: list) -> str:
    head = ["run", "method"] + SUMMARY_HEADERS
    cells = [head] + [[str(r[0]), str(r[1])] + [f"{v:.4g}" for v in r[2:]] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(head))]
    out = io.StringIO()
    for k, row in enumerate(cells):
        out.write("  ".join(c.rjust(wd) for c, wd in zip(row, widths)).rstrip() + "\n")
        if k == 0:
            out.write("  ".join("-" * wd for wd in widths) + "\n")
    return out.getvalue()


def curve_rows(manifests: list) -> list:
    """Flatten manifest histories, truncated to the shortest one."""
    if not manifests:
        raise ValueError("need at least one manifest")
    lengths = [len(m["history"]) for m in manifests]
    common = min(lengths)
    if len(set(lengths)) > 1:
        logger.warning("manifests have %s epochs; truncating all to %d", sorted(set(lengths)), common)
    rows = []
    for m in manifests:
        for rec in m["history"][:common]:
            rows.append(
                {
                    "method": m["method"],
                    "seed": m["seed"],
                    "epoch": rec["epoch"],
                    "mu": rec["mu"],
                    "mean_gstar": rec.get("val_mean_gstar", math.nan),
                    "max_gstar": rec.get("val_max_gstar", math.nan),
                }
            )
    return rows


def write_curves_csv(path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, CURVE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in r.items()})


def band_series(rows: list, key: str) -> list:
    """Per method: across-seed mean line with a per-epoch min/max band."""
    series = []
    for method in sorted({r["method"] for r in rows}):
        by_epoch = {}
        for r in rows:
            if r["method"] == method:
                by_epoch.setdefault(r["epoch"], []).append(r[key])
        epochs = [e for e in sorted(by_epoch) if np.all(np.isfinite(by_epoch[e]))]
        vals = [np.asarray(by_epoch[e], dtype=np.float64) for e in epochs]
        series.append(
            {
                "label": method,
                "x": [float(e) for e in epochs],
                "y": [float(np.mean(v)) for v in vals],
                "lo": [float(np.min(v)) for v in vals],
                "hi": [float(np.max(v)) for v in vals],
            }
        )
    return series


def write_curve_charts(out_dir, rows: list) -> list:
    out_dir = Path(out_dir)
    paths = []
    for key, title, name in (
        ("mean_gstar", "Mean validation gap", "gap_mean.svg"),
        ("max_gstar", "Worst validation gap", "gap_max.svg"),
    ):
        svg = line_chart(band_series(rows, key), title, "epoch", "G* (%)", log_y=True)
        path = out_dir / name
        path.write_text(svg)
        paths.append(path)
    return paths
