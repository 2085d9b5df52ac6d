"""Minimal SVG renderer for gesture label timelines (predicted row above
ground truth) and loss curves."""

from __future__ import annotations

from pathlib import Path

import numpy as np

PALETTE = [
    "#d9d9d9", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
    "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939", "#8c6d31", "#843c39", "#7b4173",
]


def _runs(labels):
    labels = np.asarray(labels)
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            yield start, i, int(labels[start])
            start = i


def timeline_svg(predicted, truth, title: str = "", width: int = 1000, row_h: int = 28) -> str:
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    n = max(len(predicted), len(truth), 1)
    sx = (width - 110) / n
    top = 30
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{top + 2 * row_h + 60}">',
        f'<text x="10" y="18" font-family="sans-serif" font-size="13">{title}</text>',
    ]
    for r, (name, seq) in enumerate((("estimated", predicted), ("truth", truth))):
        y = top + r * (row_h + 6)
        parts.append(f'<text x="10" y="{y + row_h * 0.65:.1f}" font-family="sans-serif" font-size="12">{name}</text>')
        for a, b, g in _runs(seq):
            if g < 0:
                continue
            parts.append(
                f'<rect x="{100 + a * sx:.2f}" y="{y}" width="{(b - a) * sx:.2f}" height="{row_h}" '
                f'fill="{PALETTE[g % len(PALETTE)]}"><title>G{g}</title></rect>'
            )
    used = sorted({int(g) for g in np.concatenate([predicted, truth]) if g >= 0})
    ly = top + 2 * (row_h + 6) + 14
    for i, g in enumerate(used):
        x = 100 + i * 56
        parts.append(f'<rect x="{x}" y="{ly}" width="12" height="12" fill="{PALETTE[g % len(PALETTE)]}"/>')
        parts.append(f'<text x="{x + 16}" y="{ly + 11}" font-family="sans-serif" font-size="11">G{g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def curve_svg(values, title: str = "", width: int = 600, height: int = 300) -> str:
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    pad = 40
    if v.size < 2:
        pts = ""
    else:
        lo, hi = float(v.min()), float(v.max())
        span = hi - lo or 1.0
        xs = pad + np.arange(v.size) * (width - 2 * pad) / (v.size - 1)
        ys = height - pad - (v - lo) * (height - 2 * pad) / span
        pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
        f'<text x="10" y="18" font-family="sans-serif" font-size="13">{title}</text>\n'
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" fill="none" stroke="#999"/>\n'
        f'<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>\n'
        "</svg>\n"
    )


def write(path, svg: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg)
    return path
