"""Minimal deterministic SVG charts.

Hand-rolled rather than pulled from a plotting library so the benchmark's
figure output is byte-stable across runs and environments: same input,
same file. Only what the report needs: polyline charts and paired bar
histograms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#17becf")

_W, _H = 720, 440
_ML, _MR, _MT, _MB = 64, 160, 40, 48


@dataclass
class Series:
    label: str
    xs: list
    ys: list
    dashed: bool = False


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def line_chart(series: list[Series], title: str, xlabel: str, ylabel: str) -> str:
    pts = [(x, y) for s in series for x, y in zip(s.xs, s.ys) if y is not None]
    if pts:
        x_lo = min(p[0] for p in pts)
        x_hi = max(p[0] for p in pts)
        y_lo = min(p[1] for p in pts)
        y_hi = max(p[1] for p in pts)
    else:
        x_lo, x_hi, y_lo, y_hi = 0.0, 1.0, 0.0, 1.0
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_lo -= 0.5
        y_hi += 0.5
    pad = 0.05 * (y_hi - y_lo)
    y_lo -= pad
    y_hi += pad

    pw = _W - _ML - _MR
    ph = _H - _MT - _MB

    def px(x: float) -> float:
        return _ML + pw * (x - x_lo) / (x_hi - x_lo)

    def py(y: float) -> float:
        return _MT + ph * (1.0 - (y - y_lo) / (y_hi - y_lo))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W // 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{_ML}" y1="{_MT + ph}" x2="{_ML + pw}" y2="{_MT + ph}" stroke="black"/>',
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_MT + ph}" stroke="black"/>',
        f'<text x="{_ML + pw / 2:.1f}" y="{_H - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="16" y="{_MT + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_MT + ph / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for tx in _ticks(x_lo, x_hi):
        out.append(
            f'<text x="{px(tx):.1f}" y="{_MT + ph + 16}" text-anchor="middle">{_fmt(tx)}</text>'
        )
    for ty in _ticks(y_lo, y_hi):
        out.append(
            f'<line x1="{_ML}" y1="{py(ty):.1f}" x2="{_ML + pw}" y2="{py(ty):.1f}" '
            f'stroke="#dddddd"/>'
        )
        out.append(f'<text x="{_ML - 6}" y="{py(ty) + 4:.1f}" text-anchor="end">{_fmt(ty)}</text>')

    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        dash = ' stroke-dasharray="6 4"' if s.dashed else ""
        chain = [(x, y) for x, y in zip(s.xs, s.ys) if y is not None]
        if len(chain) >= 2:
            points = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in chain)
            out.append(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="2"{dash}/>')
        for x, y in chain:
            out.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" fill="{color}"/>')
        ly = _MT + 16 * i
        out.append(
            f'<line x1="{_ML + pw + 10}" y1="{ly + 6}" x2="{_ML + pw + 34}" y2="{ly + 6}" '
            f'stroke="{color}" stroke-width="2"{dash}/>'
        )
        out.append(f'<text x="{_ML + pw + 40}" y="{ly + 10}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def paired_histogram(
    edges: list[float], counts_a: list[int], counts_b: list[int],
    label_a: str, label_b: str, title: str, xlabel: str,
) -> str:
    """Two interleaved bar series over shared bin edges."""
    bins = len(edges) - 1
    top = max(1, max(counts_a, default=0), max(counts_b, default=0))
    pw = _W - _ML - _MR
    ph = _H - _MT - _MB
    bw = pw / bins

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W // 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{_ML}" y1="{_MT + ph}" x2="{_ML + pw}" y2="{_MT + ph}" stroke="black"/>',
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_MT + ph}" stroke="black"/>',
        f'<text x="{_ML + pw / 2:.1f}" y="{_H - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="16" y="{_MT + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_MT + ph / 2:.1f})">count</text>',
    ]
    for i, (ca, cb) in enumerate(zip(counts_a, counts_b)):
        x0 = _ML + i * bw
        for j, (c, color) in enumerate(((ca, PALETTE[0]), (cb, PALETTE[1]))):
            h = ph * c / top
            out.append(
                f'<rect x="{x0 + 1 + j * (bw / 2 - 1):.1f}" y="{_MT + ph - h:.1f}" '
                f'width="{bw / 2 - 2:.1f}" height="{h:.1f}" fill="{color}" fill-opacity="0.8"/>'
            )
    for i in range(0, bins + 1, max(1, bins // 5)):
        x = _ML + i * bw
        out.append(f'<text x="{x:.1f}" y="{_MT + ph + 16}" text-anchor="middle">{_fmt(edges[i])}</text>')
    for j, (lbl, color) in enumerate(((label_a, PALETTE[0]), (label_b, PALETTE[1]))):
        ly = _MT + 16 * j
        out.append(f'<rect x="{_ML + pw + 10}" y="{ly}" width="12" height="12" fill="{color}"/>')
        out.append(f'<text x="{_ML + pw + 28}" y="{ly + 10}">{escape(lbl)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path: str | Path, svg_text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg_text)
    return path
