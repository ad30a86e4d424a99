"""Minimal SVG emitters for line plots and boolean heatmaps."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 360
MARGIN = 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _frame(title, xlabel, ylabel, x0, x1, y0, y1, width, height):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{MARGIN}" y1="{height - MARGIN}" x2="{width - MARGIN}" y2="{height - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{height - MARGIN}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{height / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {height / 2})">{escape(ylabel)}</text>',
        f'<text x="{MARGIN}" y="{height - MARGIN + 15}" font-size="10" text-anchor="middle">{_fmt(x0)}</text>',
        f'<text x="{width - MARGIN}" y="{height - MARGIN + 15}" font-size="10" text-anchor="middle">{_fmt(x1)}</text>',
        f'<text x="{MARGIN - 4}" y="{height - MARGIN}" font-size="10" text-anchor="end">{_fmt(y0)}</text>',
        f'<text x="{MARGIN - 4}" y="{MARGIN + 4}" font-size="10" text-anchor="end">{_fmt(y1)}</text>',
    ]
    return parts


def line_plot(series, title="", xlabel="", ylabel="", width=WIDTH, height=HEIGHT,
              max_points: int = 2000) -> str:
    """``series`` is a sequence of ``(x, y, label)``; long series are decimated."""
    xs = [np.asarray(s[0], float) for s in series]
    ys = [np.asarray(s[1], float) for s in series]
    allx = np.concatenate(xs) if xs else np.array([0.0, 1.0])
    ally = np.concatenate(ys) if ys else np.array([0.0, 1.0])
    allx, ally = allx[np.isfinite(allx)], ally[np.isfinite(ally)]
    x0, x1 = (float(allx.min()), float(allx.max())) if allx.size else (0.0, 1.0)
    y0, y1 = (float(ally.min()), float(ally.max())) if ally.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    sx = (width - 2 * MARGIN) / (x1 - x0)
    sy = (height - 2 * MARGIN) / (y1 - y0)
    parts = _frame(title, xlabel, ylabel, x0, x1, y0, y1, width, height)
    for i, (x, y, (_, _, label)) in enumerate(zip(xs, ys, series)):
        step = max(1, len(x) // max_points)
        ok = np.isfinite(x) & np.isfinite(y)
        px = MARGIN + (x[ok][::step] - x0) * sx
        py = height - MARGIN - (y[ok][::step] - y0) * sy
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
        color = COLORS[i % len(COLORS)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{width - MARGIN + 4}" y="{MARGIN + 14 * i}" font-size="11" '
                     f'fill="{color}">{escape(str(label))}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def heatmap(mask, xs, ys, title="", xlabel="", ylabel="", width=WIDTH, height=HEIGHT) -> str:
    """Boolean grid ``mask[i, j]`` for ``xs[i]`` (columns) and ``ys[j]`` (rows)."""
    mask = np.asarray(mask, bool)
    nx, ny = mask.shape
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    parts = _frame(title, xlabel, ylabel, xs.min(), xs.max(), ys.min(), ys.max(), width, height)
    cw = (width - 2 * MARGIN) / nx
    ch = (height - 2 * MARGIN) / ny
    for i in range(nx):
        for j in range(ny):
            color = "#2ca02c" if mask[i, j] else "#d62728"
            x = MARGIN + i * cw
            y = height - MARGIN - (j + 1) * ch
            parts.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{cw:.2f}" height="{ch:.2f}" fill="{color}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
