"""Deterministic SVG heatmaps of joint densities."""
from __future__ import annotations

import hashlib
import os
from xml.sax.saxutils import escape

import numpy as np

from dg_bench.errors import ValidationError
from dg_bench.metrics import DiscreteJoint

CELL_W, CELL_H = 64, 36
LEFT, TOP = 110, 60
LOW = (255, 255, 255)
HIGH = (8, 48, 107)


def _colour(t: float) -> str:
    r, g, b = (int(round(lo + (hi - lo) * t)) for lo, hi in zip(LOW, HIGH))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(values, row_names, col_names, title: str = "", fmt: str = "{:.3f}") -> str:
    """SVG text for an ``M x K`` matrix of values in ``[0, 1]``; colour scales with the max."""
    V = np.asarray(values, dtype=float)
    if V.ndim != 2 or V.shape != (len(row_names), len(col_names)):
        raise ValidationError(
            f"matrix shape {V.shape} does not match {len(row_names)} row and {len(col_names)} column names")
    M, K = V.shape
    width, height = LEFT + K * CELL_W + 10, TOP + M * CELL_H + 10
    vmax = float(V.max()) if V.size and V.max() > 0 else 1.0
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<text x="{LEFT}" y="18" font-size="14">{escape(title)}</text>',
    ]
    for j, name in enumerate(col_names):
        x = LEFT + j * CELL_W + CELL_W // 2
        out.append(f'<text x="{x}" y="{TOP - 8}" text-anchor="middle">{escape(str(name))}</text>')
    for i, name in enumerate(row_names):
        y = TOP + i * CELL_H
        out.append(f'<text x="{LEFT - 8}" y="{y + CELL_H // 2 + 4}" text-anchor="end">{escape(str(name))}</text>')
        for j in range(K):
            t = min(max(V[i, j] / vmax, 0.0), 1.0)
            x = LEFT + j * CELL_W
            ink = "#ffffff" if t > 0.5 else "#000000"
            out.append(f'<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" '
                       f'fill="{_colour(t)}" stroke="#888888"/>')
            out.append(f'<text x="{x + CELL_W // 2}" y="{y + CELL_H // 2 + 4}" text-anchor="middle" '
                       f'fill="{ink}">{fmt.format(V[i, j])}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_heatmap(joint: DiscreteJoint, cell_names, label_names, path, title: str = "") -> str:
    """Write the joint as an SVG grid (cells as rows, labels as columns); returns the file's sha256."""
    svg = heatmap_svg(joint.mass, list(cell_names), list(label_names), title)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    data = svg.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()
