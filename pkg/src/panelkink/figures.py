"""Minimal deterministic SVG emission for paths and binned scatters.

Hand-rolled rather than a plotting library so that identical inputs yield
byte-identical files: fixed float formatting, no timestamps, no ids.
"""

from __future__ import annotations

import numpy as np

from .binscatter import BinnedScatter
from .eventstudy import EventStudyPath

WIDTH, HEIGHT = 640.0, 420.0
MARGIN = 56.0


def _fmt(x: float) -> str:
    return f"{x:.3f}"


class _Axes:
    def __init__(self, x_lo, x_hi, y_lo, y_hi):
        if x_hi <= x_lo:
            x_hi = x_lo + 1.0
        if y_hi <= y_lo:
            y_hi = y_lo + 1.0
        self.x_lo, self.x_hi, self.y_lo, self.y_hi = x_lo, x_hi, y_lo, y_hi

    def x(self, v: float) -> float:
        frac = (v - self.x_lo) / (self.x_hi - self.x_lo)
        return MARGIN + frac * (WIDTH - 2 * MARGIN)

    def y(self, v: float) -> float:
        frac = (v - self.y_lo) / (self.y_hi - self.y_lo)
        return HEIGHT - MARGIN - frac * (HEIGHT - 2 * MARGIN)


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0f}" height="{HEIGHT:.0f}" '
        f'viewBox="0 0 {WIDTH:.0f} {HEIGHT:.0f}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{WIDTH/2:.0f}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{title}</text>',
    ]


def _frame(ax: _Axes, x_label: str, y_label: str) -> list[str]:
    parts = [
        f'<line x1="{_fmt(MARGIN)}" y1="{_fmt(HEIGHT-MARGIN)}" x2="{_fmt(WIDTH-MARGIN)}" '
        f'y2="{_fmt(HEIGHT-MARGIN)}" stroke="black" stroke-width="1"/>',
        f'<line x1="{_fmt(MARGIN)}" y1="{_fmt(MARGIN)}" x2="{_fmt(MARGIN)}" '
        f'y2="{_fmt(HEIGHT-MARGIN)}" stroke="black" stroke-width="1"/>',
        f'<text x="{WIDTH/2:.0f}" y="{HEIGHT-12:.0f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_label}</text>',
        f'<text x="16" y="{HEIGHT/2:.0f}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12" transform="rotate(-90 16 {HEIGHT/2:.0f})">{y_label}</text>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        xv = ax.x_lo + frac * (ax.x_hi - ax.x_lo)
        yv = ax.y_lo + frac * (ax.y_hi - ax.y_lo)
        parts.append(
            f'<text x="{_fmt(ax.x(xv))}" y="{_fmt(HEIGHT-MARGIN+18)}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">{xv:.3g}</text>')
        parts.append(
            f'<text x="{_fmt(MARGIN-8)}" y="{_fmt(ax.y(yv)+3)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10">{yv:.3g}</text>')
    return parts


def event_study_svg(path: EventStudyPath, title: str = "Event-study path") -> str:
    """Point estimates with 95% whiskers and a dashed line at treatment."""
    lo, hi = path.ci95()
    hs = np.array(path.horizons, dtype=float)
    y_lo = float(min(lo.min(), 0.0))
    y_hi = float(max(hi.max(), 0.0))
    pad = 0.08 * (y_hi - y_lo or 1.0)
    ax = _Axes(hs.min() - 0.5, hs.max() + 0.5, y_lo - pad, y_hi + pad)
    parts = _header(title)
    parts += _frame(ax, "horizon (years since treatment)", "effect")
    parts.append(
        f'<line x1="{_fmt(ax.x(0.0))}" y1="{_fmt(MARGIN)}" x2="{_fmt(ax.x(0.0))}" '
        f'y2="{_fmt(HEIGHT-MARGIN)}" stroke="gray" stroke-width="1" stroke-dasharray="5,4"/>')
    if ax.y_lo < 0 < ax.y_hi:
        parts.append(
            f'<line x1="{_fmt(MARGIN)}" y1="{_fmt(ax.y(0.0))}" x2="{_fmt(WIDTH-MARGIN)}" '
            f'y2="{_fmt(ax.y(0.0))}" stroke="lightgray" stroke-width="1"/>')
    for h, est, l, u in zip(hs, path.estimates, lo, hi):
        parts.append(
            f'<line x1="{_fmt(ax.x(h))}" y1="{_fmt(ax.y(l))}" x2="{_fmt(ax.x(h))}" '
            f'y2="{_fmt(ax.y(u))}" stroke="steelblue" stroke-width="1.5"/>')
        parts.append(
            f'<circle cx="{_fmt(ax.x(h))}" cy="{_fmt(ax.y(est))}" r="3.5" fill="steelblue"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def binscatter_svg(bs: BinnedScatter, title: str = "Binned scatter") -> str:
    """Bin means, the two split regression lines, and a dashed split line."""
    x_lo, x_hi = float(bs.x_means.min()), float(bs.x_means.max())
    y_lo, y_hi = float(bs.y_means.min()), float(bs.y_means.max())
    x_pad = 0.04 * (x_hi - x_lo or 1.0)
    y_pad = 0.08 * (y_hi - y_lo or 1.0)
    ax = _Axes(x_lo - x_pad, x_hi + x_pad, y_lo - y_pad, y_hi + y_pad)
    parts = _header(title)
    parts += _frame(ax, "adjusted share", "adjusted outcome")
    if ax.x_lo < bs.split_point < ax.x_hi:
        parts.append(
            f'<line x1="{_fmt(ax.x(bs.split_point))}" y1="{_fmt(MARGIN)}" '
            f'x2="{_fmt(ax.x(bs.split_point))}" y2="{_fmt(HEIGHT-MARGIN)}" '
            f'stroke="gray" stroke-width="1" stroke-dasharray="5,4"/>')
    for x, y in zip(bs.x_means, bs.y_means):
        parts.append(f'<circle cx="{_fmt(ax.x(x))}" cy="{_fmt(ax.y(y))}" r="2.5" fill="black"/>')
    for line, seg in ((bs.line_below, (ax.x_lo, min(bs.split_point, ax.x_hi))),
                      (bs.line_above, (max(bs.split_point, ax.x_lo), ax.x_hi))):
        if line is None:
            continue
        a, b = line
        x0, x1 = seg
        parts.append(
            f'<line x1="{_fmt(ax.x(x0))}" y1="{_fmt(ax.y(a + b * x0))}" '
            f'x2="{_fmt(ax.x(x1))}" y2="{_fmt(ax.y(a + b * x1))}" '
            f'stroke="firebrick" stroke-width="2"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
