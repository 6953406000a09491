"""Minimal deterministic SVG line charts.

No plotting dependency: charts here are simple polyline figures whose bytes
are a pure function of the input series, so repeated runs diff clean.
"""

from __future__ import annotations

import math

__all__ = ["line_chart"]

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#17becf", "#7f7f7f"]

_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 62.0, 16.0, 34.0, 46.0


def _linear_ticks(lo: float, hi: float, count: int = 5):
    if not math.isfinite(lo) or not math.isfinite(hi) or hi <= lo:
        return [lo]
    span = hi - lo
    step = 10.0 ** math.floor(math.log10(span / count))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if span / (step * mult) <= count:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * span and len(ticks) < 20:
        ticks.append(round(t, 12))
        t += step
    return ticks or [lo]


def _log_ticks(lo: float, hi: float):
    k0 = math.ceil(math.log10(lo) - 1e-12)
    k1 = math.floor(math.log10(hi) + 1e-12)
    ticks = [10.0 ** k for k in range(k0, k1 + 1)]
    if len(ticks) >= 2:
        return ticks
    # under a decade of range: borrow linear ticks
    return [t for t in _linear_ticks(lo, hi) if t > 0]


def _fmt_tick(v: float) -> str:
    return f"{v:g}"


def line_chart(path: str, series, *, title: str = "", xlabel: str = "",
               ylabel: str = "", logx: bool = False, logy: bool = False,
               width: int = 640, height: int = 420, legend: bool = True) -> None:
    """Write an SVG line chart; ``series`` is a list of (label, xs, ys)."""
    series = [(label, [float(x) for x in xs], [float(y) for y in ys])
              for label, xs, ys in series if len(xs) and len(xs) == len(ys)]
    if not series:
        raise ValueError("line_chart needs at least one nonempty series")
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    if logx and min(xs_all) <= 0:
        raise ValueError("log-scale x requires positive values")
    if logy and min(ys_all) <= 0:
        raise ValueError("log-scale y requires positive values")

    def fx(v):
        return math.log10(v) if logx else v

    def fy(v):
        return math.log10(v) if logy else v

    x_lo, x_hi = min(map(fx, xs_all)), max(map(fx, xs_all))
    y_lo, y_hi = min(map(fy, ys_all)), max(map(fy, ys_all))
    if x_hi - x_lo < 1e-12:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi - y_lo < 1e-12:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad_y = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad_y, y_hi + pad_y

    plot_w = width - _MARGIN_L - _MARGIN_R
    plot_h = height - _MARGIN_T - _MARGIN_B

    def px(v):
        return _MARGIN_L + (fx(v) - x_lo) / (x_hi - x_lo) * plot_w

    def py(v):
        return _MARGIN_T + plot_h - (fy(v) - y_lo) / (y_hi - y_lo) * plot_h

    x_ticks = (_log_ticks(min(xs_all), max(xs_all)) if logx
               else _linear_ticks(x_lo, x_hi))
    y_ticks = (_log_ticks(min(ys_all), max(ys_all)) if logy
               else _linear_ticks(y_lo, y_hi))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    ax_style = 'stroke="#333333" stroke-width="1"'
    x0, y0 = _MARGIN_L, _MARGIN_T + plot_h
    parts.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x0 + plot_w:.2f}" '
                 f'y2="{y0:.2f}" {ax_style}/>')
    parts.append(f'<line x1="{x0:.2f}" y1="{_MARGIN_T:.2f}" x2="{x0:.2f}" '
                 f'y2="{y0:.2f}" {ax_style}/>')
    txt = 'font-family="monospace" font-size="11" fill="#333333"'
    for t in x_ticks:
        vx = px(t) if logx else _MARGIN_L + (t - x_lo) / (x_hi - x_lo) * plot_w
        if vx < _MARGIN_L - 0.5 or vx > _MARGIN_L + plot_w + 0.5:
            continue
        parts.append(f'<line x1="{vx:.2f}" y1="{y0:.2f}" x2="{vx:.2f}" '
                     f'y2="{y0 + 4:.2f}" {ax_style}/>')
        parts.append(f'<text x="{vx:.2f}" y="{y0 + 16:.2f}" text-anchor="middle" '
                     f'{txt}>{_fmt_tick(t)}</text>')
    for t in y_ticks:
        vy = py(t) if logy else _MARGIN_T + plot_h - (t - y_lo) / (y_hi - y_lo) * plot_h
        if vy < _MARGIN_T - 0.5 or vy > _MARGIN_T + plot_h + 0.5:
            continue
        parts.append(f'<line x1="{x0 - 4:.2f}" y1="{vy:.2f}" x2="{x0:.2f}" '
                     f'y2="{vy:.2f}" {ax_style}/>')
        parts.append(f'<text x="{x0 - 7:.2f}" y="{vy + 4:.2f}" text-anchor="end" '
                     f'{txt}>{_fmt_tick(t)}</text>')
    if title:
        parts.append(f'<text x="{width / 2:.2f}" y="20" text-anchor="middle" '
                     f'font-family="monospace" font-size="13" '
                     f'fill="#111111">{title}</text>')
    if xlabel:
        parts.append(f'<text x="{_MARGIN_L + plot_w / 2:.2f}" '
                     f'y="{height - 10:.2f}" text-anchor="middle" {txt}>'
                     f'{xlabel}</text>')
    if ylabel:
        cx, cy = 14.0, _MARGIN_T + plot_h / 2
        parts.append(f'<text x="{cx:.2f}" y="{cy:.2f}" text-anchor="middle" '
                     f'transform="rotate(-90 {cx:.2f} {cy:.2f})" {txt}>'
                     f'{ylabel}</text>')
    for i, (label, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        for x, y in zip(xs, ys):
            parts.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="2.2" '
                         f'fill="{color}"/>')
    if legend and len(series) > 1:
        for i, (label, _, _) in enumerate(series):
            color = _PALETTE[i % len(_PALETTE)]
            ly = _MARGIN_T + 8 + 14 * i
            lx = _MARGIN_L + plot_w - 110
            parts.append(f'<line x1="{lx:.2f}" y1="{ly:.2f}" x2="{lx + 18:.2f}" '
                         f'y2="{ly:.2f}" stroke="{color}" stroke-width="2"/>')
            parts.append(f'<text x="{lx + 23:.2f}" y="{ly + 4:.2f}" {txt}>'
                         f'{label}</text>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts))
        f.write("\n")
