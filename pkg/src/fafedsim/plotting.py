"""Static SVG line charts built from results CSVs, with no plotting dependency."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

from .results import read_columns

X_AXES = ("t", "comms", "samples")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f")

WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 160, 20, 50


def _num(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list:
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def render_svg(series: list, x_label: str, y_label: str, log_y: bool = False) -> str:
    """``series`` holds (name, xs, ys) triples; returns the SVG document text."""
    pts = []
    for name, xs, ys in series:
        keep = [(x, y) for x, y in zip(xs, ys)
                if math.isfinite(x) and math.isfinite(y) and (y > 0 or not log_y)]
        if log_y:
            keep = [(x, math.log10(y)) for x, y in keep]
        pts.append((name, keep))
    all_x = [x for _, p in pts for x, _ in p]
    all_y = [y for _, p in pts for _, y in p]
    if not all_x:
        raise ValueError("nothing to plot")
    x0, x1 = min(all_x), max(all_x)
    y0, y1 = min(all_y), max(all_y)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM
    sx = lambda x: LEFT + (x - x0) / (x1 - x0) * pw
    sy = lambda y: TOP + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for v in _ticks(x0, x1):
        out.append(f'<text x="{_num(sx(v))}" y="{TOP + ph + 18}" font-size="11" '
                   f'text-anchor="middle">{v:.4g}</text>')
    for v in _ticks(y0, y1):
        label = f"1e{v:.2g}" if log_y else f"{v:.4g}"
        out.append(f'<text x="{LEFT - 6}" y="{_num(sy(v) + 4)}" font-size="11" '
                   f'text-anchor="end">{label}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{HEIGHT - 10}" font-size="12" '
               f'text-anchor="middle">{escape(x_label)}</text>')
    ylab = f"{y_label} (log10)" if log_y else y_label
    out.append(f'<text x="14" y="{TOP + ph / 2:.2f}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 14 {TOP + ph / 2:.2f})">{escape(ylab)}</text>')

    for k, (name, p) in enumerate(pts):
        color = PALETTE[k % len(PALETTE)]
        coords = " ".join(f"{_num(sx(x))},{_num(sy(y))}" for x, y in p)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = TOP + 14 + 18 * k
        out.append(f'<line x1="{WIDTH - RIGHT + 12}" y1="{ly}" x2="{WIDTH - RIGHT + 32}" '
                   f'y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{WIDTH - RIGHT + 38}" y="{ly + 4}" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(csv_paths, column: str, out_path, x_axis: str = "comms", log_y: bool = False) -> Path:
    if not csv_paths:
        raise ValueError("at least one CSV is required")
    if x_axis not in X_AXES:
        raise ValueError(f"x axis must be one of {', '.join(X_AXES)}")
    series = []
    for p in csv_paths:
        cols = read_columns(p)
        for name in (x_axis, column):
            if name not in cols:
                raise ValueError(f"{p}: missing column {name!r}")
        if not cols[column]:
            raise ValueError(f"{p}: no data rows")
        series.append((Path(p).stem, cols[x_axis], cols[column]))
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_svg(series, x_axis, column, log_y))
    return out
