"""Self-contained SVG line charts, no plotting dependencies.

Good enough for the two report figures: average rank versus sparsity for one
or more runs, and rank/accuracy versus the rank-loss weight.
"""

from __future__ import annotations

__all__ = ["line_chart", "dual_axis_chart"]

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

_W, _H = 640, 400
_ML, _MR, _MT, _MB = 70, 70, 50, 60


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def _scale(lo: float, hi: float, a: float, b: float):
    span = hi - lo if hi > lo else 1.0

    def f(v: float) -> float:
        return a + (v - lo) / span * (b - a)

    return f


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _axes(parts, sx, sy, xticks, yticks, xlabel, ylabel, title):
    x0, x1 = _ML, _W - _MR
    y0, y1 = _H - _MB, _MT
    parts.append(f'<rect width="{_W}" height="{_H}" fill="white"/>')
    parts.append(
        f'<text x="{_W / 2}" y="24" text-anchor="middle" font-size="15" font-weight="600">{title}</text>'
    )
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="#333"/>')
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="#333"/>')
    for t in xticks:
        px = sx(t)
        parts.append(f'<line x1="{px}" y1="{y0}" x2="{px}" y2="{y0 + 5}" stroke="#333"/>')
        parts.append(
            f'<text x="{px}" y="{y0 + 20}" text-anchor="middle" font-size="11">{_fmt(t)}</text>'
        )
    for t in yticks:
        py = sy(t)
        parts.append(f'<line x1="{x0 - 5}" y1="{py}" x2="{x0}" y2="{py}" stroke="#333"/>')
        parts.append(
            f'<text x="{x0 - 8}" y="{py + 4}" text-anchor="end" font-size="11">{_fmt(t)}</text>'
        )
    parts.append(
        f'<text x="{(x0 + x1) / 2}" y="{_H - 15}" text-anchor="middle" font-size="12">{xlabel}</text>'
    )
    parts.append(
        f'<text x="18" y="{(y0 + y1) / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 18 {(y0 + y1) / 2})">{ylabel}</text>'
    )


def _polyline(sx, sy, xs, ys, color):
    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    line = f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>'
    dots = "".join(
        f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{color}"/>'
        for x, y in zip(xs, ys)
    )
    return line + dots


def _legend(parts, labels_colors, x, y):
    for i, (label, color) in enumerate(labels_colors):
        ly = y + 18 * i
        parts.append(f'<rect x="{x}" y="{ly - 9}" width="14" height="4" fill="{color}"/>')
        parts.append(f'<text x="{x + 20}" y="{ly - 4}" font-size="11">{label}</text>')


def line_chart(series, title: str, xlabel: str, ylabel: str) -> str:
    """series: list of (label, xs, ys) tuples, one polyline each."""
    if not series or any(len(xs) == 0 for _, xs, _ in series):
        raise ValueError("nothing to plot")
    all_x = [x for _, xs, _ in series for x in xs]
    all_y = [y for _, _, ys in series for y in ys]
    xt, yt = _ticks(min(all_x), max(all_x)), _ticks(min(all_y), max(all_y))
    sx = _scale(xt[0], xt[-1], _ML, _W - _MR)
    sy = _scale(yt[0], yt[-1], _H - _MB, _MT)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_W} {_H}" font-family="sans-serif">']
    _axes(parts, sx, sy, xt, yt, xlabel, ylabel, title)
    colors = []
    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        parts.append(_polyline(sx, sy, xs, ys, color))
        colors.append((label, color))
    _legend(parts, colors, _ML + 12, _MT + 16)
    parts.append("</svg>")
    return "\n".join(parts)


def dual_axis_chart(xs, left_label, left_ys, right_label, right_ys, title, xlabel) -> str:
    """Two series over shared x, each with its own y-axis (left and right)."""
    if len(xs) == 0:
        raise ValueError("nothing to plot")
    positions = list(range(len(xs)))  # categorical x, even spacing
    xt = positions
    lt = _ticks(min(left_ys), max(left_ys))
    rt = _ticks(min(right_ys), max(right_ys))
    sx = _scale(0, max(len(xs) - 1, 1), _ML, _W - _MR)
    sl = _scale(lt[0], lt[-1], _H - _MB, _MT)
    sr = _scale(rt[0], rt[-1], _H - _MB, _MT)
    x0, x1 = _ML, _W - _MR
    y0, y1 = _H - _MB, _MT
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_W} {_H}" font-family="sans-serif">']
    parts.append(f'<rect width="{_W}" height="{_H}" fill="white"/>')
    parts.append(
        f'<text x="{_W / 2}" y="24" text-anchor="middle" font-size="15" font-weight="600">{title}</text>'
    )
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="#333"/>')
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="#333"/>')
    parts.append(f'<line x1="{x1}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="#333"/>')
    for p, label in zip(positions, xs):
        px = sx(p)
        parts.append(f'<line x1="{px}" y1="{y0}" x2="{px}" y2="{y0 + 5}" stroke="#333"/>')
        parts.append(
            f'<text x="{px}" y="{y0 + 20}" text-anchor="middle" font-size="11">{label}</text>'
        )
    for t in lt:
        py = sl(t)
        parts.append(
            f'<text x="{x0 - 8}" y="{py + 4}" text-anchor="end" font-size="11" fill="{PALETTE[0]}">{_fmt(t)}</text>'
        )
    for t in rt:
        py = sr(t)
        parts.append(
            f'<text x="{x1 + 8}" y="{py + 4}" text-anchor="start" font-size="11" fill="{PALETTE[1]}">{_fmt(t)}</text>'
        )
    parts.append(
        f'<text x="{(x0 + x1) / 2}" y="{_H - 15}" text-anchor="middle" font-size="12">{xlabel}</text>'
    )
    parts.append(_polyline(sx, sl, positions, left_ys, PALETTE[0]))
    parts.append(_polyline(sx, sr, positions, right_ys, PALETTE[1]))
    _legend(parts, [(left_label, PALETTE[0]), (right_label, PALETTE[1])], _ML + 12, _MT + 16)
    parts.append("</svg>")
    return "\n".join(parts)
