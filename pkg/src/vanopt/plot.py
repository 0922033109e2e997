"""Static SVG line plots of trace CSV files.

Output depends only on the input values: coordinates are rounded to two
decimals and no timestamps or random ids are emitted, so identical inputs
give identical bytes.
"""

from __future__ import annotations

import csv
import math
from html import escape
from pathlib import Path

from .errors import SchemaMismatch

WIDTH, HEIGHT = 640, 400
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 70, 20, 20, 50
N_TICKS = 5
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def read_table(path) -> tuple[list[str], list[list[float]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaMismatch(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    try:
        values = [[float(v) for v in row] for row in body]
    except ValueError as exc:
        raise SchemaMismatch(f"{path}: non-numeric entry ({exc})") from None
    return header, values


def _ticks(lo: float, hi: float, log: bool) -> list[float]:
    if log:
        a, b = math.floor(lo), math.ceil(hi)
        step = max(1, math.ceil((b - a) / N_TICKS))
        return [float(e) for e in range(a, b + 1, step)]
    return [lo + (hi - lo) * k / (N_TICKS - 1) for k in range(N_TICKS)]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _label(v: float, log: bool) -> str:
    return f"1e{int(v)}" if log else f"{v:.3g}"


def render_svg(series, x_label: str, y_label: str, log_y: bool = False) -> str:
    """``series`` is a list of ``(name, xs, ys)``; returns the SVG document text."""
    pts_all = []
    for name, xs, ys in series:
        pts = []
        for x, y in zip(xs, ys):
            if not (math.isfinite(x) and math.isfinite(y)) or (log_y and y <= 0):
                continue
            pts.append((x, math.log10(y) if log_y else y))
        pts_all.append((name, pts))
    flat = [p for _, pts in pts_all for p in pts]
    if flat:
        x_lo, x_hi = min(p[0] for p in flat), max(p[0] for p in flat)
        y_lo, y_hi = min(p[1] for p in flat), max(p[1] for p in flat)
    else:
        x_lo, x_hi, y_lo, y_hi = 0.0, 1.0, 0.0, 1.0
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    if log_y:
        y_lo, y_hi = math.floor(y_lo), math.ceil(y_hi)
    pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def sx(x):
        return MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y):
        return MARGIN_TOP + (y_hi - y) / (y_hi - y_lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x_lo, x_hi, False):
        x = _fmt(sx(t))
        out.append(f'<line x1="{x}" y1="{MARGIN_TOP + ph}" x2="{x}" y2="{MARGIN_TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x}" y="{MARGIN_TOP + ph + 18}" font-size="11" text-anchor="middle">{_label(t, False)}</text>')
    for t in _ticks(y_lo, y_hi, log_y):
        y = _fmt(sy(t))
        out.append(f'<line x1="{MARGIN_LEFT - 5}" y1="{y}" x2="{MARGIN_LEFT}" y2="{y}" stroke="black"/>')
        out.append(f'<text x="{MARGIN_LEFT - 8}" y="{y}" font-size="11" text-anchor="end" dominant-baseline="middle">{_label(t, log_y)}</text>')
    out.append(f'<text x="{MARGIN_LEFT + pw / 2:.2f}" y="{HEIGHT - 10}" font-size="13" text-anchor="middle">{escape(x_label)}</text>')
    y_title = f"{y_label} (log scale)" if log_y else y_label
    cy = MARGIN_TOP + ph / 2
    out.append(f'<text x="15" y="{cy:.2f}" font-size="13" text-anchor="middle" transform="rotate(-90 15 {cy:.2f})">{escape(y_title)}</text>')
    for k, (name, pts) in enumerate(pts_all):
        color = COLORS[k % len(COLORS)]
        coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
    for k, (name, _) in enumerate(pts_all):
        color = COLORS[k % len(COLORS)]
        ly = MARGIN_TOP + 15 + 16 * k
        lx = MARGIN_LEFT + pw - 150
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}" font-size="11" dominant-baseline="middle">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_traces(trace_csvs, columns, out_svg, x_column: str = "iter", log_y: bool = False, names=None) -> str:
    """Plot ``columns`` of each trace against ``x_column`` and write ``out_svg``.

    All traces must share one header.  Legend entries follow input order
    (file stem, plus the column name when more than one column is drawn).
    """
    paths = [Path(p) for p in trace_csvs]
    if not paths:
        raise ValueError("no traces given")
    columns = list(columns)
    names = list(names) if names is not None else [p.stem for p in paths]
    header = None
    series = []
    for path, name in zip(paths, names):
        cols, rows = read_table(path)
        if header is None:
            header = cols
        elif cols != header:
            raise SchemaMismatch(f"{path}: header differs from {paths[0]}")
        for c in [x_column, *columns]:
            if c not in cols:
                raise SchemaMismatch(f"{path}: no column {c!r}")
        xi = cols.index(x_column)
        for c in columns:
            ci = cols.index(c)
            label = name if len(columns) == 1 else f"{name}: {c}"
            series.append((label, [r[xi] for r in rows], [r[ci] for r in rows]))
    y_label = columns[0] if len(columns) == 1 else ", ".join(columns)
    svg = render_svg(series, x_column, y_label, log_y)
    Path(out_svg).write_text(svg, encoding="utf-8")
    return svg
