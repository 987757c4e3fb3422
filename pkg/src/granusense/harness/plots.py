"""Minimal deterministic SVG line charts and heatmaps."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#000000", "#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo: float, hi: float, count: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def _decimate(xs, ys, max_points: int):
    xs, ys = np.asarray(xs), np.asarray(ys)
    if len(xs) <= max_points:
        return xs, ys
    idx = np.unique(np.linspace(0, len(xs) - 1, max_points).round().astype(int))
    return xs[idx], ys[idx]


def line_chart(series, title: str, xlabel: str, ylabel: str,
               width: int = 640, height: int = 420, max_points: int = 800) -> str:
    """``series`` is a list of (label, xs, ys)."""
    left, right, top, bottom = 70, 150, 40, 55
    pw, ph = width - left - right, height - top - bottom
    xmin = min(float(np.min(xs)) for _, xs, _ in series)
    xmax = max(float(np.max(xs)) for _, xs, _ in series)
    ymin = min(0.0, min(float(np.min(ys)) for _, _, ys in series))
    ymax = max(float(np.max(ys)) for _, _, ys in series)
    if xmax <= xmin:
        xmax = xmin + 1.0
    if ymax <= ymin:
        ymax = ymin + 1.0

    def sx(x):
        return left + (x - xmin) / (xmax - xmin) * pw

    def sy(y):
        return top + ph - (y - ymin) / (ymax - ymin) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left + pw / 2:.1f}" y="22" text-anchor="middle" font-size="14">'
           f'{escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for t in _ticks(xmin, xmax):
        out.append(f'<line x1="{sx(t):.1f}" y1="{top + ph}" x2="{sx(t):.1f}" y2="{top + ph + 5}" '
                   f'stroke="#444"/><text x="{sx(t):.1f}" y="{top + ph + 18}" '
                   f'text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(ymin, ymax):
        out.append(f'<line x1="{left - 5}" y1="{sy(t):.1f}" x2="{left}" y2="{sy(t):.1f}" '
                   f'stroke="#444"/><text x="{left - 8}" y="{sy(t) + 4:.1f}" '
                   f'text-anchor="end">{t:.3g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="18" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for k, (label, xs, ys) in enumerate(series):
        colour = PALETTE[k % len(PALETTE)]
        xs, ys = _decimate(xs, ys, max_points)
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.3" points="{pts}"/>')
        ly = top + 14 + 18 * k
        out.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 36}" y2="{ly}" '
                   f'stroke="{colour}" stroke-width="2"/>'
                   f'<text x="{left + pw + 42}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap(matrix, labels, title: str, cell: int = 44) -> str:
    """Confusion-matrix style heatmap with counts in each cell (rows = truth)."""
    m = np.asarray(matrix)
    n = len(labels)
    left, top = 120, 110
    width, height = left + n * cell + 20, top + n * cell + 40
    row_max = np.maximum(m.sum(axis=1, keepdims=True), 1)
    frac = m / row_max
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">'
           f'{escape(title)}</text>',
           f'<text x="{left + n * cell / 2:.1f}" y="{height - 10}" text-anchor="middle">'
           f'predicted</text>']
    for j, name in enumerate(labels):
        x = left + j * cell + cell / 2
        out.append(f'<text x="{x:.1f}" y="{top - 8}" text-anchor="start" '
                   f'transform="rotate(-60 {x:.1f} {top - 8})">{escape(name)}</text>')
    for i, name in enumerate(labels):
        y = top + i * cell
        out.append(f'<text x="{left - 6}" y="{y + cell / 2 + 4:.1f}" text-anchor="end">'
                   f'{escape(name)}</text>')
        for j in range(n):
            shade = int(round(255 * (1 - frac[i, j])))
            colour = f"rgb({shade},{shade},255)"
            ink = "white" if frac[i, j] > 0.5 else "black"
            x = left + j * cell
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{colour}" '
                       f'stroke="#ccc"/><text x="{x + cell / 2:.1f}" y="{y + cell / 2 + 4:.1f}" '
                       f'text-anchor="middle" fill="{ink}">{int(m[i, j])}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
