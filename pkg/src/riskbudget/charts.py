"""Standalone SVG line charts.

Each chart embeds its series as JSON in a ``<metadata>`` element, so the
plotted numbers can be recovered from the file without the CSV.
"""

from __future__ import annotations

import json
import math
from html import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _ticks(lo: float, hi: float, count: int = 5) -> list:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    step = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 5, 10):
        if raw <= mult * step:
            step *= mult
            break
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step) + 1)]


def line_chart(series: list, title: str, xlabel: str = "iteration", ylabel: str = "",
               hlines: list | None = None, width: int = 640, height: int = 400) -> str:
    """Render ``series`` ([{"label", "x", "y", "dashed"?}]) and horizontal reference lines.

    ``hlines`` holds ({"label", "y"}) levels drawn dotted in the colour of the
    series with the same label, if any.
    """
    hlines = hlines or []
    left, right, top, bottom = 64, 150, 36, 48
    xs = [x for s in series for x in s["x"]]
    ys = [y for s in series for y in s["y"] if math.isfinite(y)] + [h["y"] for h in hlines]
    if not xs or not ys:
        raise ValueError("nothing to plot")
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    pad = 0.05 * (y1 - y0 or abs(y1) or 1.0)
    y0, y1 = y0 - pad, y1 + pad
    x1 = x1 if x1 > x0 else x0 + 1
    pw, ph = width - left - right, height - top - bottom

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (y1 - y) / (y1 - y0) * ph

    colour = {s["label"]: PALETTE[k % len(PALETTE)] for k, s in enumerate(series)}
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">']
    data = {"title": title, "series": [{"label": s["label"], "x": list(s["x"]), "y": list(s["y"])} for s in series],
            "hlines": hlines}
    out.append(f"<metadata>{escape(json.dumps(data))}</metadata>")
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
    out.append(f'<text x="{left + pw / 2}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>')
    for y in _ticks(y0, y1):
        out.append(f'<line x1="{left}" x2="{left + pw}" y1="{py(y):.1f}" y2="{py(y):.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{py(y) + 4:.1f}" text-anchor="end">{y:g}</text>')
    for x in _ticks(x0, x1):
        out.append(f'<text x="{px(x):.1f}" y="{top + ph + 16}" text-anchor="middle">{x:g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2})">{escape(ylabel)}</text>')
    for h in hlines:
        c = colour.get(h["label"], "#000")
        out.append(f'<line x1="{left}" x2="{left + pw}" y1="{py(h["y"]):.1f}" y2="{py(h["y"]):.1f}" '
                   f'stroke="{c}" stroke-dasharray="2,3"/>')
    for k, s in enumerate(series):
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(s["x"], s["y"]) if math.isfinite(y))
        dash = ' stroke-dasharray="6,3"' if s.get("dashed") else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{colour[s["label"]]}" stroke-width="1.4"{dash}/>')
        ly = top + 14 + 16 * k
        out.append(f'<line x1="{left + pw + 10}" x2="{left + pw + 30}" y1="{ly}" y2="{ly}" '
                   f'stroke="{colour[s["label"]]}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{left + pw + 34}" y="{ly + 4}">{escape(s["label"])}</text>')
    out.append("</svg>")
    return "\n".join(out)


def embedded_data(svg: str) -> dict:
    """Series stored in a chart produced by :func:`line_chart`."""
    from html import unescape

    start = svg.index("<metadata>") + len("<metadata>")
    return json.loads(unescape(svg[start:svg.index("</metadata>")]))
