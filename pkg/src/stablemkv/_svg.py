"""Minimal static SVG line plots (no plotting dependency)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _ticks(lo, hi, log):
    if log:
        a, b = math.floor(lo), math.ceil(hi)
        return [float(k) for k in range(a, b + 1)]
    span = hi - lo or 1.0
    step = 10 ** math.floor(math.log10(span / 4))
    for m in (1, 2, 5, 10):
        if span / (m * step) <= 6:
            step *= m
            break
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step) + 1)]


def line_plot(series: dict, title: str, xlabel: str, ylabel: str, logx=False, logy=False,
              width=560, height=360) -> str:
    """``series`` maps a label to ``(xs, ys)``; non-positive values are dropped on log axes."""
    pts = {}
    for name, (xs, ys) in series.items():
        keep = [(x, y) for x, y in zip(xs, ys)
                if math.isfinite(x) and math.isfinite(y) and (not logx or x > 0) and (not logy or y > 0)]
        pts[name] = [(math.log10(x) if logx else x, math.log10(y) if logy else y) for x, y in keep]
    allp = [p for v in pts.values() for p in v]
    ml, mr, mt, mb = 70, 20, 30, 50
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>']
    if not allp:
        out.append(f'<text x="{width / 2}" y="{height / 2}" text-anchor="middle">no data</text></svg>')
        return "\n".join(out) + "\n"
    x0, x1 = min(p[0] for p in allp), max(p[0] for p in allp)
    y0, y1 = min(p[1] for p in allp), max(p[1] for p in allp)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    pw, ph = width - ml - mr, height - mt - mb
    X = lambda v: ml + (v - x0) / (x1 - x0) * pw
    Y = lambda v: mt + ph - (v - y0) / (y1 - y0) * ph
    out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
    for tx in _ticks(x0, x1, logx):
        if x0 <= tx <= x1:
            lab = f"1e{int(tx)}" if logx else f"{tx:g}"
            out.append(f'<line x1="{X(tx):.2f}" y1="{mt + ph}" x2="{X(tx):.2f}" y2="{mt + ph + 4}" stroke="#444"/>')
            out.append(f'<text x="{X(tx):.2f}" y="{mt + ph + 16}" text-anchor="middle">{lab}</text>')
    for ty in _ticks(y0, y1, logy):
        if y0 <= ty <= y1:
            lab = f"1e{int(ty)}" if logy else f"{ty:g}"
            out.append(f'<line x1="{ml - 4}" y1="{Y(ty):.2f}" x2="{ml}" y2="{Y(ty):.2f}" stroke="#444"/>')
            out.append(f'<text x="{ml - 6}" y="{Y(ty) + 4:.2f}" text-anchor="end">{lab}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{mt + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {mt + ph / 2})">{escape(ylabel)}</text>')
    for i, (name, p) in enumerate(pts.items()):
        c = _COLORS[i % len(_COLORS)]
        if p:
            path = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in p)
            out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{path}"/>')
            out.extend(f'<circle cx="{X(a):.2f}" cy="{Y(b):.2f}" r="2.5" fill="{c}"/>' for a, b in p)
        out.append(f'<text x="{ml + 8}" y="{mt + 14 + 14 * i}" fill="{c}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
