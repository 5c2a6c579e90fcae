"""Minimal self-contained SVG line charts."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .errors import EmptySeries

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + 0.5 * step, step)


def line_chart(series: dict, title: str = "", xlabel: str = "days", ylabel: str = "relative value",
               width: int = 800, height: int = 450) -> str:
    """Render named (x, y) series as one SVG document.

    Parameters
    ----------
    series : dict
        Label -> (x, y) pair of equal-length arrays.  Non-finite points
        break the line.
    """
    if not series or all(len(np.asarray(v[0])) == 0 for v in series.values()):
        raise EmptySeries("nothing to plot")
    ml, mr, mt, mb = 70, 20, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()])
    ys = ys[np.isfinite(ys)]
    if ys.size == 0:
        raise EmptySeries("no finite values to plot")
    x0, x1 = float(np.min(xs)), float(np.max(xs))
    y0, y1 = float(np.min(ys)), float(np.max(ys))
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def sx(v):
        return ml + (np.asarray(v, float) - x0) / (x1 - x0) * pw

    def sy(v):
        return mt + ph - (np.asarray(v, float) - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for v in _ticks(x0, x1):
        px = float(sx(v))
        out.append(f'<line x1="{px:.1f}" y1="{mt + ph}" x2="{px:.1f}" y2="{mt + ph + 5}" stroke="#444"/>'
                   f'<text x="{px:.1f}" y="{mt + ph + 18}" text-anchor="middle">{v:g}</text>')
    for v in _ticks(y0, y1):
        py = float(sy(v))
        out.append(f'<line x1="{ml - 5}" y1="{py:.1f}" x2="{ml}" y2="{py:.1f}" stroke="#444"/>'
                   f'<line x1="{ml}" y1="{py:.1f}" x2="{ml + pw}" y2="{py:.1f}" stroke="#ddd"/>'
                   f'<text x="{ml - 8}" y="{py + 4:.1f}" text-anchor="end">{v:.4g}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{escape(ylabel)}</text>')
    for n, (label, (x, y)) in enumerate(series.items()):
        color = PALETTE[n % len(PALETTE)]
        px, py = sx(x), sy(y)
        ok = np.isfinite(py)
        # split into runs of finite points
        breaks = np.flatnonzero(np.diff(ok.astype(int)) != 0) + 1
        for seg in np.split(np.arange(px.size), breaks):
            if seg.size == 0 or not ok[seg[0]]:
                continue
            pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px[seg], py[seg]))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.3" points="{pts}">'
                       f'<title>{escape(label)}</title></polyline>')
        ly = mt + 14 + 16 * n
        out.append(f'<line x1="{ml + 10}" y1="{ly - 4}" x2="{ml + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>'
                   f'<text x="{ml + 35}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>\n")
    return "\n".join(out)
