"""Minimal SVG line plots: axes, ticks, labels, polylines.

Deliberately dependency-free and deterministic: identical data produces
byte-identical SVG (no timestamps, fixed formatting), so plots never
perturb reproducibility checks.  Plots are derived views of the CSVs and
carry no data of their own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")

W, H = 720, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 78, 24, 40, 58


@dataclass
class Series:
    x: list
    y: list
    label: str = ""
    color: str = ""
    marker: bool = False


@dataclass
class LinePlot:
    title: str = ""
    x_label: str = ""
    y_label: str = ""
    x_log: bool = False
    y_log: bool = False
    series: list = field(default_factory=list)

    def add(self, x, y, label="", marker=False):
        color = PALETTE[len(self.series) % len(PALETTE)]
        self.series.append(Series([float(v) for v in x],
                                  [float(v) for v in y], label, color, marker))


def _ticks(lo: float, hi: float, log: bool) -> list:
    if log:
        lo_e = math.floor(math.log10(lo))
        hi_e = math.ceil(math.log10(hi))
        vals = [10.0 ** e for e in range(int(lo_e), int(hi_e) + 1)]
        return [v for v in vals if lo / 1.0001 <= v <= hi * 1.0001]
    span = hi - lo
    if span <= 0:
        return [lo]
    step = 10.0 ** math.floor(math.log10(span / 4.0))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if span / (step * mult) <= 6:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    out = []
    v = first
    while v <= hi + step * 1e-9:
        out.append(0.0 if abs(v) < step * 1e-9 else v)
        v += step
    return out


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    a = abs(v)
    if 1e-3 <= a < 1e4:
        return f"{v:g}"
    return f"{v:.2g}"


def render(plot: LinePlot) -> str:
    xs = [v for s in plot.series for v in s.x]
    ys = [v for s in plot.series for v in s.y]
    if not xs:
        xs = ys = [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if plot.x_log:
        x_lo = max(x_lo, 1e-300)
    if plot.y_log:
        pos = [v for v in ys if v > 0] or [1e-3, 1.0]
        y_lo, y_hi = min(pos), max(pos)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05

    def sx(v):
        if plot.x_log:
            f = (math.log10(v) - math.log10(x_lo)) / \
                (math.log10(x_hi) - math.log10(x_lo))
        else:
            f = (v - x_lo) / (x_hi - x_lo)
        f = pad + (1 - 2 * pad) * f
        return MARGIN_L + f * (W - MARGIN_L - MARGIN_R)

    def sy(v):
        if plot.y_log:
            v = max(v, y_lo)
            f = (math.log10(v) - math.log10(y_lo)) / \
                (math.log10(y_hi) - math.log10(y_lo))
        else:
            f = (v - y_lo) / (y_hi - y_lo)
        f = pad + (1 - 2 * pad) * f
        return H - MARGIN_B - f * (H - MARGIN_T - MARGIN_B)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{plot.title}</text>',
    ]
    ax_y0, ax_y1 = H - MARGIN_B, MARGIN_T
    ax_x0, ax_x1 = MARGIN_L, W - MARGIN_R
    out.append(f'<line x1="{ax_x0}" y1="{ax_y0}" x2="{ax_x1}" y2="{ax_y0}" '
               'stroke="black"/>')
    out.append(f'<line x1="{ax_x0}" y1="{ax_y0}" x2="{ax_x0}" y2="{ax_y1}" '
               'stroke="black"/>')
    for v in _ticks(x_lo, x_hi, plot.x_log):
        px = sx(v)
        out.append(f'<line x1="{px:.1f}" y1="{ax_y0}" x2="{px:.1f}" '
                   f'y2="{ax_y0 + 5}" stroke="black"/>')
        out.append(f'<text x="{px:.1f}" y="{ax_y0 + 20}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{_fmt(v)}</text>')
    for v in _ticks(y_lo, y_hi, plot.y_log):
        py = sy(v)
        out.append(f'<line x1="{ax_x0 - 5}" y1="{py:.1f}" x2="{ax_x0}" '
                   f'y2="{py:.1f}" stroke="black"/>')
        out.append(f'<text x="{ax_x0 - 8}" y="{py + 4:.1f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{_fmt(v)}</text>')
    out.append(f'<text x="{(ax_x0 + ax_x1) / 2:.1f}" y="{H - 14}" '
               'text-anchor="middle" font-family="sans-serif" '
               f'font-size="13">{plot.x_label}</text>')
    out.append(f'<text x="20" y="{(ax_y0 + ax_y1) / 2:.1f}" '
               'text-anchor="middle" font-family="sans-serif" font-size="13" '
               f'transform="rotate(-90 20 {(ax_y0 + ax_y1) / 2:.1f})">'
               f'{plot.y_label}</text>')
    legend_y = MARGIN_T + 6
    for s in plot.series:
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(s.x, s.y)
                       if not plot.y_log or y > 0)
        out.append(f'<polyline points="{pts}" fill="none" stroke="{s.color}" '
                   'stroke-width="1.5"/>')
        if s.marker:
            for x, y in zip(s.x, s.y):
                if plot.y_log and y <= 0:
                    continue
                out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2.5" '
                           f'fill="{s.color}"/>')
        if s.label:
            out.append(f'<line x1="{ax_x1 - 150}" y1="{legend_y}" '
                       f'x2="{ax_x1 - 126}" y2="{legend_y}" '
                       f'stroke="{s.color}" stroke-width="2"/>')
            out.append(f'<text x="{ax_x1 - 120}" y="{legend_y + 4}" '
                       'font-family="sans-serif" font-size="11">'
                       f'{s.label}</text>')
            legend_y += 16
    out.append("</svg>")
    return "\n".join(out) + "\n"
