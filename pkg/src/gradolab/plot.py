"""Minimal deterministic SVG line plots for sweep tables."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=78, right=24, top=40, bottom=56)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


@dataclass(frozen=True)
class PlotSpec:
    x: str
    y: tuple[str, ...]
    log_x: bool = False
    log_y: bool = False
    title: str = ""
    x_label: str | None = None
    y_label: str | None = None


def _nice_step(span, target=5):
    raw = span / target
    mag = 10 ** math.floor(math.log10(raw))
    for m in (1, 2, 5, 10):
        if m * mag >= raw:
            return m * mag
    return 10 * mag


class _Axis:
    def __init__(self, lo, hi, log, p0, p1):
        if log:
            lo, hi = math.log10(lo), math.log10(hi)
        if hi == lo:
            pad = abs(lo) * 0.05 if lo else 0.5
            lo, hi = lo - pad, hi + pad
        self.lo, self.hi, self.log = lo, hi, log
        self.p0, self.p1 = p0, p1

    def __call__(self, v):
        if self.log:
            v = math.log10(v)
        return self.p0 + (v - self.lo) / (self.hi - self.lo) * (self.p1 - self.p0)

    def ticks(self):
        lo, hi = self.lo, self.hi
        if self.log:
            first, last = math.ceil(lo - 1e-9), math.floor(hi + 1e-9)
            if last - first >= 1:
                step = max(1, math.ceil((last - first) / 8))
                return [10.0**e for e in range(first, last + 1, step)]
            return [10.0 ** (lo + k * (hi - lo) / 4) for k in range(5)]
        step = _nice_step(hi - lo)
        start = math.ceil(lo / step - 1e-9)
        out = []
        k = start
        while k * step <= hi + 1e-9 * step:
            out.append(k * step)
            k += 1
        return out


def _label(v):
    if v == 0:
        return "0"
    return f"{v:.3g}"


def _f(v):
    return f"{v:.2f}"


def render_plot(columns: Mapping[str, Sequence[float]], spec: PlotSpec) -> str:
    """Standalone SVG with one polyline per ``spec.y`` column against
    ``spec.x``. Points that are non-finite, or non-positive on a log axis,
    are left out. Identical input gives identical bytes."""
    for name in (spec.x, *spec.y):
        if name not in columns:
            raise KeyError(f"unknown column {name!r}")
    if not spec.y:
        raise ValueError("at least one y column is required")
    xs = [float(v) for v in columns[spec.x]]
    if not xs:
        raise ValueError("no data rows")

    def usable(v, log):
        return math.isfinite(v) and (v > 0 or not log)

    series = []
    for name in spec.y:
        ys = [float(v) for v in columns[name]]
        if len(ys) != len(xs):
            raise ValueError(f"column {name!r} has {len(ys)} values, expected {len(xs)}")
        pts = [(x, y) for x, y in zip(xs, ys) if usable(x, spec.log_x) and usable(y, spec.log_y)]
        series.append((name, pts))
    all_pts = [p for _, pts in series for p in pts]
    if not all_pts:
        raise ValueError("no plottable points")
    xa = _Axis(min(p[0] for p in all_pts), max(p[0] for p in all_pts), spec.log_x,
               MARGIN["left"], WIDTH - MARGIN["right"])
    ya = _Axis(min(p[1] for p in all_pts), max(p[1] for p in all_pts), spec.log_y,
               HEIGHT - MARGIN["bottom"], MARGIN["top"])
    left, right = MARGIN["left"], WIDTH - MARGIN["right"]
    top, bottom = MARGIN["top"], HEIGHT - MARGIN["bottom"]

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if spec.title:
        out.append(f'<text x="{_f(WIDTH / 2)}" y="22" text-anchor="middle" font-size="14">{escape(spec.title)}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" fill="none" stroke="black"/>')
    for t in xa.ticks():
        px = xa(t)
        out.append(f'<line x1="{_f(px)}" y1="{bottom}" x2="{_f(px)}" y2="{bottom + 5}" stroke="black"/>')
        out.append(f'<text x="{_f(px)}" y="{bottom + 18}" text-anchor="middle">{_label(t)}</text>')
    for t in ya.ticks():
        py = ya(t)
        out.append(f'<line x1="{left - 5}" y1="{_f(py)}" x2="{left}" y2="{_f(py)}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{_f(py + 4)}" text-anchor="end">{_label(t)}</text>')
    out.append(f'<text x="{_f((left + right) / 2)}" y="{HEIGHT - 14}" text-anchor="middle">{escape(spec.x_label or spec.x)}</text>')
    ylab = spec.y_label or (spec.y[0] if len(spec.y) == 1 else "")
    if ylab:
        cy = (top + bottom) / 2
        out.append(f'<text x="16" y="{_f(cy)}" text-anchor="middle" transform="rotate(-90 16 {_f(cy)})">{escape(ylab)}</text>')
    for i, (name, pts) in enumerate(series):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{_f(xa(x))},{_f(ya(y))}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = top + 14 + 16 * i
        out.append(f'<line x1="{right - 130}" y1="{ly}" x2="{right - 110}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{right - 104}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def sweep_columns(table) -> dict[str, list[float]]:
    """Columns of a sweep table at the first and last tracked cells."""
    return {
        "param": [r.param for r in table.rows],
        "delta_input": list(table.column("input", "delta")),
        "delta_output": list(table.column("output", "delta")),
        "S_ode_input": list(table.column("input", "S_ode")),
        "S_rtm_input": list(table.column("input", "S_rtm")),
        "S_ode_output": list(table.column("output", "S_ode")),
        "S_rtm_output": list(table.column("output", "S_rtm")),
    }
