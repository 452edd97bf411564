"""Minimal deterministic SVG line charts.

Output depends only on the data: fixed canvas, fixed palette, coordinates
rounded to two decimals, no timestamps or generated ids.
"""

from __future__ import annotations

import math
from html import escape
from pathlib import Path

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
WIDTH, HEIGHT = 720, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 40, 50


def _fmt(v):
    return f"{v:.2f}"


def _tick(v):
    return f"{v:.4g}"


def line_chart(series, title="", xlabel="", ylabel=""):
    """Render ``{label: (xs, ys)}`` as an SVG document string.

    Non-finite points are dropped.  Series are drawn in insertion order.
    """
    pts = {
        label: [(float(x), float(y)) for x, y in zip(xs, ys) if math.isfinite(x) and math.isfinite(y)]
        for label, (xs, ys) in series.items()
    }
    allx = [p[0] for v in pts.values() for p in v]
    ally = [p[1] for v in pts.values() for p in v]
    x0, x1 = (min(allx), max(allx)) if allx else (0.0, 1.0)
    y0, y1 = (min(ally), max(ally)) if ally else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        pad = abs(y0) * 0.05 or 0.5
        y0, y1 = y0 - pad, y1 + pad
    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B

    def sx(x):
        return MARGIN_L + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return MARGIN_T + (1.0 - (y - y0) / (y1 - y0)) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="#ffffff"/>',
        f'<text x="{WIDTH / 2:.0f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{escape(title)}</text>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="#444444"/>',
    ]
    for i in range(5):
        fy = y0 + (y1 - y0) * i / 4
        fx = x0 + (x1 - x0) * i / 4
        parts.append(f'<line x1="{MARGIN_L}" y1="{_fmt(sy(fy))}" x2="{MARGIN_L + pw}" y2="{_fmt(sy(fy))}" stroke="#e5e5e5"/>')
        parts.append(f'<text x="{MARGIN_L - 6}" y="{_fmt(sy(fy) + 4)}" text-anchor="end" font-family="sans-serif" font-size="11">{_tick(fy)}</text>')
        parts.append(f'<text x="{_fmt(sx(fx))}" y="{MARGIN_T + ph + 16}" text-anchor="middle" font-family="sans-serif" font-size="11">{_tick(fx)}</text>')
    if xlabel:
        parts.append(f'<text x="{MARGIN_L + pw / 2:.0f}" y="{HEIGHT - 10}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>')
    if ylabel:
        parts.append(f'<text x="16" y="{MARGIN_T + ph / 2:.0f}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {MARGIN_T + ph / 2:.0f})">{escape(ylabel)}</text>')
    for k, (label, p) in enumerate(pts.items()):
        color = PALETTE[k % len(PALETTE)]
        if p:
            path = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in p)
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        ly = MARGIN_T + 14 + 16 * k
        parts.append(f'<line x1="{MARGIN_L + pw - 130}" y1="{ly}" x2="{MARGIN_L + pw - 110}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{MARGIN_L + pw - 104}" y="{ly + 4}" font-family="sans-serif" font-size="11">{escape(str(label))}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_line_chart(path, series, title="", xlabel="", ylabel=""):
    Path(path).write_text(line_chart(series, title, xlabel, ylabel), encoding="utf-8", newline="\n")
