"""Minimal SVG line plots. The CSV files are the data of record; these are
only for looking at."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
WIDTH, HEIGHT, MARGIN = 640, 400, 60


def _transform(v, lo, hi, log):
    if log:
        v, lo, hi = np.log10(v), np.log10(lo), np.log10(hi)
    span = hi - lo if hi > lo else 1.0
    return (v - lo) / span


def line_plot(path, series, title: str = "", xlabel: str = "t", ylabel: str = "",
              logx: bool = False, logy: bool = False, manifest_hash: str = "") -> Path:
    """Write ``series`` (list of ``(label, x, y)``) as polylines to ``path``.

    Non-finite points, and non-positive ones on a log axis, are dropped.
    """
    clean = []
    for label, x, y in series:
        x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        keep = np.isfinite(x) & np.isfinite(y)
        if logx:
            keep &= x > 0
        if logy:
            keep &= y > 0
        if keep.any():
            clean.append((label, x[keep], y[keep]))
    if clean:
        xs = np.concatenate([c[1] for c in clean])
        ys = np.concatenate([c[2] for c in clean])
        xlo, xhi, ylo, yhi = xs.min(), xs.max(), ys.min(), ys.max()
    else:
        xlo, xhi, ylo, yhi = 0.0, 1.0, 0.0, 1.0
    pw, ph = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}">']
    if manifest_hash:
        out.append(f"<!-- manifest {manifest_hash} -->")
    out.append(f'<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    out.append(f'<text x="{WIDTH / 2}" y="{MARGIN / 2}" text-anchor="middle">{escape(title)}</text>')
    out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 15}" text-anchor="middle">{escape(xlabel)}'
               f'{" (log)" if logx else ""}</text>')
    out.append(f'<text x="15" y="{HEIGHT / 2}" transform="rotate(-90 15 {HEIGHT / 2})" '
               f'text-anchor="middle">{escape(ylabel)}{" (log)" if logy else ""}</text>')
    for v, anchor, (x, y) in ((xlo, "start", (MARGIN, HEIGHT - MARGIN + 15)),
                              (xhi, "end", (WIDTH - MARGIN, HEIGHT - MARGIN + 15)),
                              (ylo, "end", (MARGIN - 5, HEIGHT - MARGIN)),
                              (yhi, "end", (MARGIN - 5, MARGIN + 10))):
        out.append(f'<text x="{x}" y="{y}" font-size="10" text-anchor="{anchor}">{v:.3g}</text>')
    for k, (label, x, y) in enumerate(clean):
        color = COLORS[k % len(COLORS)]
        px = MARGIN + pw * _transform(x, xlo, xhi, logx)
        py = HEIGHT - MARGIN - ph * _transform(y, ylo, yhi, logy)
        if px.size > 2000:
            idx = np.unique(np.linspace(0, px.size - 1, 2000).astype(int))
            px, py = px[idx], py[idx]
        pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(px, py))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{WIDTH - MARGIN - 5}" y="{MARGIN + 15 + 14 * k}" font-size="11" '
                   f'text-anchor="end" fill="{color}">{escape(str(label))}</text>')
    out.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n")
    return path
