"""Training curves as hand-written SVG.

The CSV log is the source of truth: :func:`plot_curves` always writes it
next to the panels, and every panel is rendered from the parsed CSV so that
re-plotting a saved log reproduces the SVG files byte for byte.
"""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from xml.sax.saxutils import escape

PANELS = ("dice", "thresholds", "sampling_rate")
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")

WIDTH, HEIGHT = 480, 320
MARGIN = dict(left=56, right=16, top=28, bottom=40)


class PlotError(ValueError):
    pass


def parse_log(text: str) -> tuple[list[str], list[list[float]]]:
    """Header and float rows of a CSV log; checks iterations increase and values are finite."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise PlotError("log is empty") from None
    if not header or header[0] != "iteration":
        raise PlotError("log must start with an 'iteration' column")
    rows = []
    for line in reader:
        if not line:
            continue
        if len(line) != len(header):
            raise PlotError(f"row {len(rows) + 1} has {len(line)} fields, expected {len(header)}")
        vals = [float(v) for v in line]
        if not all(math.isfinite(v) for v in vals):
            raise PlotError(f"non-finite value in row {len(rows) + 1}")
        if rows and vals[0] <= rows[-1][0]:
            raise PlotError("iterations must be strictly increasing")
        rows.append(vals)
    if not rows:
        raise PlotError("log has no rows")
    return header, rows


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _ticks(lo: float, hi: float, k: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (k - 1) for i in range(k)]


def _label(v: float) -> str:
    if abs(v) >= 1000 or v == int(v):
        return str(int(round(v)))
    return f"{v:.3g}"


def svg_panel(title: str, x: list[float], series: dict[str, list[float]], y_range=None) -> str:
    """One line chart with axes, ticks and a legend."""
    if not x:
        raise PlotError("cannot plot an empty series")
    x0, x1 = min(x), max(x)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y_range is None:
        ys = [v for vals in series.values() for v in vals]
        y0, y1 = min(ys), max(ys)
        if y1 == y0:
            y0, y1 = y0 - 0.5, y1 + 0.5
    else:
        y0, y1 = y_range
    left, top = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - left - MARGIN["right"]
    ph = HEIGHT - top - MARGIN["bottom"]

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" font-size="13">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{_fmt(px(t))}" y1="{top + ph}" x2="{_fmt(px(t))}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(
            f'<text x="{_fmt(px(t))}" y="{top + ph + 16}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="10">{_label(t)}</text>'
        )
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{left - 4}" y1="{_fmt(py(t))}" x2="{left}" y2="{_fmt(py(t))}" stroke="black"/>')
        out.append(
            f'<text x="{left - 6}" y="{_fmt(py(t) + 3)}" text-anchor="end" font-family="sans-serif" '
            f'font-size="10">{_label(t)}</text>'
        )
    out.append(
        f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 6}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="11">iteration</text>'
    )
    for k, (name, ys) in enumerate(series.items()):
        color = COLORS[k % len(COLORS)]
        pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(x, ys))
        if len(x) == 1:
            out.append(f'<circle cx="{_fmt(px(x[0]))}" cy="{_fmt(py(ys[0]))}" r="2.5" fill="{color}"/>')
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 12 + 14 * k
        out.append(f'<line x1="{left + pw - 90}" y1="{ly}" x2="{left + pw - 74}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(
            f'<text x="{left + pw - 70}" y="{ly + 4}" font-family="sans-serif" font-size="10">{escape(name)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_panels(csv_text: str) -> dict[str, str]:
    """SVG text per panel name, computed from the CSV alone."""
    header, rows = parse_log(csv_text)
    col = {name: i for i, name in enumerate(header)}
    x = [r[0] for r in rows]
    panels = {}
    if "val_dice" in col:
        panels["dice"] = svg_panel("validation Dice", x, {"val Dice": [r[col["val_dice"]] for r in rows]}, (0.0, 1.0))
    tcols = [h for h in header if h.startswith("T_")]
    if tcols:
        panels["thresholds"] = svg_panel(
            "class thresholds", x, {f"class {h[2:]}": [r[col[h]] for r in rows] for h in tcols}, (0.0, 1.0)
        )
    if "sampling_rate" in col:
        panels["sampling_rate"] = svg_panel(
            "superpixel sampling rate", x, {"rate": [r[col["sampling_rate"]] for r in rows]}, (0.0, 1.0)
        )
    if not panels:
        raise PlotError("log has none of the plotted columns")
    return panels


def plot_curves(log, out_dir) -> list[Path]:
    """Write ``log.csv`` plus one SVG per panel into ``out_dir``.

    ``log`` is CSV text, a path to a CSV file, or a list of row dicts as
    produced by the trainer.
    """
    if isinstance(log, list):
        from .trainer import format_log

        if not log:
            raise PlotError("cannot plot an empty log")
        classes = sum(1 for k in log[0] if k.startswith("T_"))
        text = format_log(log, classes)
    elif isinstance(log, Path) or (isinstance(log, str) and "\n" not in log):
        text = Path(log).read_text()
    else:
        text = log
    panels = render_panels(text)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "log.csv").write_text(text)
    written = [out / "log.csv"]
    for name, svg in panels.items():
        p = out / f"{name}.svg"
        p.write_text(svg)
        written.append(p)
    return written
