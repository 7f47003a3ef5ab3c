"""Minimal log-log SVG line plots, written by hand so the structure stays predictable."""
from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["PlotError", "loglog_svg", "scatter_fit_svg"]

_W, _H = 640, 440
_M = {"left": 70, "right": 20, "top": 30, "bottom": 55}
_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2"]


class PlotError(ValueError):
    pass


class _Axes:
    def __init__(self, xs, ys):
        self.x0, self.x1 = _padded(min(xs), max(xs))
        self.y0, self.y1 = _padded(min(ys), max(ys))

    def px(self, x):
        w = _W - _M["left"] - _M["right"]
        return _M["left"] + (x - self.x0) / (self.x1 - self.x0) * w

    def py(self, y):
        h = _H - _M["top"] - _M["bottom"]
        return _H - _M["bottom"] - (y - self.y0) / (self.y1 - self.y0) * h

    def frame(self, xlabel: str, ylabel: str, title: str) -> list[str]:
        x_l, x_r = _M["left"], _W - _M["right"]
        y_t, y_b = _M["top"], _H - _M["bottom"]
        out = [
            f'<rect x="{x_l}" y="{y_t}" width="{x_r - x_l}" height="{y_b - y_t}" '
            'fill="none" stroke="#444"/>',
        ]
        for v in np.linspace(self.x0, self.x1, 5):
            out.append(f'<text class="tick" x="{self.px(v):.1f}" y="{y_b + 16}" text-anchor="middle">{v:.3g}</text>')
        for v in np.linspace(self.y0, self.y1, 5):
            out.append(f'<text class="tick" x="{x_l - 6}" y="{self.py(v) + 4:.1f}" text-anchor="end">{v:.3g}</text>')
        out.append(f'<text class="xlabel" x="{(x_l + x_r) / 2}" y="{_H - 12}" text-anchor="middle">{escape(xlabel)}</text>')
        out.append(
            f'<text class="ylabel" x="16" y="{(y_t + y_b) / 2}" text-anchor="middle" '
            f'transform="rotate(-90 16 {(y_t + y_b) / 2})">{escape(ylabel)}</text>'
        )
        out.append(f'<text class="title" x="{(x_l + x_r) / 2}" y="18" text-anchor="middle">{escape(title)}</text>')
        return out


def _padded(lo: float, hi: float) -> tuple[float, float]:
    if hi - lo < 1e-12:
        return lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _polyline(ax: _Axes, xs, ys, color: str, cls: str, dash: bool = False) -> str:
    pts = " ".join(f"{ax.px(x):.2f},{ax.py(y):.2f}" for x, y in zip(xs, ys))
    extra = ' stroke-dasharray="6 4"' if dash else ""
    return f'<polyline class="{cls}" points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{extra}/>'


def _document(body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">'
    )
    return "\n".join([head, *body, "</svg>"]) + "\n"


def loglog_svg(path, curves, fits=(), channel: str = "energy", title: str = "") -> Path:
    """Write one data polyline per ``(label, t, y)`` curve plus a dashed line per fit.

    ``fits`` holds ``(t_min, t_max, intercept, exponent)`` tuples in log10 units.
    """
    curves = [(lab, np.asarray(t, float), np.asarray(y, float)) for lab, t, y in curves]
    if not curves or any(t.size == 0 for _, t, _ in curves):
        raise PlotError("nothing to plot: empty series")
    for _, t, y in curves:
        if np.any(t <= 0) or np.any(y <= 0):
            raise PlotError("log-log plot needs strictly positive data")
    logs = [(lab, np.log10(t), np.log10(y)) for lab, t, y in curves]
    xs = np.concatenate([x for _, x, _ in logs])
    ys = np.concatenate([y for _, _, y in logs])
    ax = _Axes(xs, ys)
    body = ax.frame(f"log10 t", f"log10 {channel}", title)
    for i, (lab, x, y) in enumerate(logs):
        body.append(_polyline(ax, x, y, _COLORS[i % len(_COLORS)], "data"))
        body.append(
            f'<text class="legend" x="{_W - _M["right"] - 8}" y="{_M["top"] + 14 * (i + 1)}" '
            f'text-anchor="end" fill="{_COLORS[i % len(_COLORS)]}">{escape(str(lab))}</text>'
        )
    for t_min, t_max, intercept, exponent in fits:
        fx = np.array([math.log10(t_min), math.log10(t_max)])
        body.append(_polyline(ax, fx, intercept + exponent * fx, "#000", "fit", dash=True))
    path = Path(path)
    path.write_text(_document(body))
    return path


def scatter_fit_svg(path, x, y, line=None, xlabel: str = "alpha", ylabel: str = "fitted exponent", title: str = "") -> Path:
    """One circle marker per point, plus an optional ``(slope, intercept)`` regression line."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.size == 0:
        raise PlotError("nothing to plot: empty summary")
    ax = _Axes(np.append(x, [0.0, 1.0]) if line else x, y)
    body = ax.frame(xlabel, ylabel, title)
    for xi, yi in zip(x, y):
        body.append(f'<circle class="marker" cx="{ax.px(xi):.2f}" cy="{ax.py(yi):.2f}" r="4" fill="#1f77b4"/>')
    if line is not None:
        slope, intercept = line
        lx = np.array([ax.x0, ax.x1])
        body.append(_polyline(ax, lx, intercept + slope * lx, "#000", "fit", dash=True))
    path = Path(path)
    path.write_text(_document(body))
    return path
