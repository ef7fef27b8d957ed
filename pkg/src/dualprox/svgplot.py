"""Self-contained SVG line charts with min/max bands."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _ticks(lo, hi, count=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + 1e-9 * step:
        out.append(round(t, 12))
        t += step
    return out


def line_chart(series, title, xlabel, ylabel, width=480, height=320, log_y=False):
    """Render ``series``: list of dicts with ``label``, ``x``, ``y`` and optional ``lo``/``hi`` band."""
    ml, mr, mt, mb = 60, 20, 30, 45
    pw, ph = width - ml - mr, height - mt - mb
    tr = (lambda v: math.log10(max(v, 1e-12))) if log_y else (lambda v: v)
    xs = [x for s in series for x in s["x"]]
    ys = [tr(v) for s in series for key in ("y", "lo", "hi") for v in s.get(key) or []]
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(v):
        return mt + (1.0 - (tr(v) - y0) / (y1 - y0)) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
    ]
    for t in _ticks(x0, x1):
        parts.append(f'<line x1="{px(t):.1f}" y1="{mt + ph}" x2="{px(t):.1f}" y2="{mt + ph + 4}" stroke="#333"/>')
        parts.append(f'<text x="{px(t):.1f}" y="{mt + ph + 16}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        yy = mt + (1.0 - (t - y0) / (y1 - y0)) * ph
        label = f"{10 ** t:.3g}" if log_y else f"{t:g}"
        parts.append(f'<line x1="{ml - 4}" y1="{yy:.1f}" x2="{ml + pw}" y2="{yy:.1f}" stroke="#ddd"/>')
        parts.append(f'<text x="{ml - 6}" y="{yy + 4:.1f}" text-anchor="end">{label}</text>')
    parts.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    parts.append(
        f'<text transform="translate(14 {mt + ph / 2:.1f}) rotate(-90)" text-anchor="middle">{escape(ylabel)}</text>'
    )
    for k, s in enumerate(series):
        color = s.get("color", PALETTE[k % len(PALETTE)])
        if s.get("lo") is not None and s.get("hi") is not None:
            upper = [f"{px(x):.2f},{py(v):.2f}" for x, v in zip(s["x"], s["hi"])]
            lower = [f"{px(x):.2f},{py(v):.2f}" for x, v in zip(reversed(s["x"]), reversed(s["lo"]))]
            parts.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        pts = " ".join(f"{px(x):.2f},{py(v):.2f}" for x, v in zip(s["x"], s["y"]))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = mt + 14 + 14 * k
        parts.append(f'<line x1="{ml + pw - 90}" y1="{ly - 4}" x2="{ml + pw - 72}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{ml + pw - 68}" y="{ly}">{escape(s["label"])}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
