"""Deterministic self-contained SVG line charts for experiment CSVs.

Charts are built by plain string assembly with fixed numeric formatting,
so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

WIDTH = 720
HEIGHT = 480
MARGIN_L = 70
MARGIN_R = 160
MARGIN_T = 40
MARGIN_B = 50

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass(frozen=True)
class PlotSpec:
    x_col: str
    y_cols: tuple
    log_x: bool = False
    log_y: bool = False
    title: str = ""


def read_csv_columns(path):
    """Read a CSV written by this package: '#' comments, one header row."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"no data rows in {path}")
    header = lines[0].split(",")
    columns = {name: [] for name in header}
    for ln in lines[1:]:
        for name, value in zip(header, ln.split(",")):
            columns[name].append(value)
    return columns


def _numeric(values, col):
    out = []
    for v in values:
        try:
            out.append(float(v))
        except ValueError:
            raise ValueError(f"column {col!r} contains non-numeric value {v!r}")
    return out


def _transform(values, log, col):
    if not log:
        return list(values)
    if any(v <= 0.0 for v in values):
        raise ValueError(f"log axis requires positive values in column {col!r}")
    return [math.log10(v) for v in values]


def _ticks(lo, hi, log_axis):
    if log_axis:
        first = math.ceil(lo - 1e-9)
        last = math.floor(hi + 1e-9)
        ticks = [(float(t), f"1e{t}") for t in range(first, last + 1)]
        if len(ticks) >= 2:
            return ticks
    span = hi - lo
    if span <= 0.0:
        return [(lo, format(lo, ".4g"))]
    return [
        (lo + span * k / 4.0, format(lo + span * k / 4.0, ".4g")) for k in range(5)
    ]


def emit_svg_plot(csv_path, spec: PlotSpec, out_path):
    """Render the requested columns as a fixed-size SVG line chart."""
    if not spec.y_cols:
        raise ValueError("plot needs at least one y column")
    columns = read_csv_columns(csv_path)
    for col in (spec.x_col, *spec.y_cols):
        if col not in columns:
            raise ValueError(f"column {col!r} not found in {csv_path}")
    xs_raw = _numeric(columns[spec.x_col], spec.x_col)
    series = {col: _numeric(columns[col], col) for col in spec.y_cols}

    xs = _transform(xs_raw, spec.log_x, spec.x_col)
    ys_all = []
    tseries = {}
    for col, vals in series.items():
        tvals = _transform(vals, spec.log_y, col)
        tseries[col] = tvals
        ys_all.extend(tvals)

    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo -= pad
    y_hi += pad

    inner_w = WIDTH - MARGIN_L - MARGIN_R
    inner_h = HEIGHT - MARGIN_T - MARGIN_B

    def px(x):
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * inner_w

    def py(y):
        return MARGIN_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * inner_h

    parts = []
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">'
    )
    parts.append(f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>')
    if spec.title:
        parts.append(
            f'<text x="{WIDTH // 2}" y="24" text-anchor="middle" '
            f'font-family="sans-serif" font-size="15">{_escape(spec.title)}</text>'
        )
    # axes
    x0, y0 = MARGIN_L, MARGIN_T + inner_h
    parts.append(
        f'<line x1="{x0}" y1="{y0}" x2="{x0 + inner_w}" y2="{y0}" stroke="black"/>'
    )
    parts.append(f'<line x1="{x0}" y1="{MARGIN_T}" x2="{x0}" y2="{y0}" stroke="black"/>')
    for tx, label in _ticks(x_lo, x_hi, spec.log_x):
        if tx < x_lo - 1e-12 or tx > x_hi + 1e-12:
            continue
        parts.append(
            f'<line x1="{px(tx):.2f}" y1="{y0}" x2="{px(tx):.2f}" y2="{y0 + 5}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{px(tx):.2f}" y="{y0 + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{label}</text>'
        )
    for ty, label in _ticks(y_lo, y_hi, spec.log_y):
        if ty < y_lo - 1e-12 or ty > y_hi + 1e-12:
            continue
        parts.append(
            f'<line x1="{x0 - 5}" y1="{py(ty):.2f}" x2="{x0}" y2="{py(ty):.2f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{x0 - 8}" y="{py(ty):.2f}" text-anchor="end" dominant-baseline="middle" '
            f'font-family="sans-serif" font-size="11">{label}</text>'
        )
    axis_label_x = spec.x_col + (" (log10)" if spec.log_x else "")
    parts.append(
        f'<text x="{MARGIN_L + inner_w // 2}" y="{HEIGHT - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{_escape(axis_label_x)}</text>'
    )
    # series
    for idx, col in enumerate(spec.y_cols):
        color = PALETTE[idx % len(PALETTE)]
        pts = " ".join(
            f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, tseries[col])
        )
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        ly = MARGIN_T + 16 + 18 * idx
        lx = MARGIN_L + inner_w + 12
        parts.append(
            f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{lx + 24}" y="{ly}" font-family="sans-serif" font-size="11">'
            f"{_escape(col)}</text>"
        )
    parts.append("</svg>")
    payload = "\n".join(parts) + "\n"
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(payload)
    return out_path


def _escape(text):
    return (
        str(text)
        .replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
    )
