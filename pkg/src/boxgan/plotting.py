"""Hand-written SVG line chart of critic scores over training.

Output depends only on the metrics values, so identical logs give identical bytes.
"""
from __future__ import annotations

from .pipeline.metrics import MetricsLog

SERIES = (("real_score", "critic score (real)", "#1f77b4"),
          ("fake_score", "critic score (fake)", "#d62728"),
          ("w_estimate", "Wasserstein estimate", "#2ca02c"))

WIDTH, HEIGHT = 720, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 180, 30, 50


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def render_svg(log: MetricsLog, title: str = "Critic scores during training") -> str:
    if len(log) == 0:
        raise ValueError("cannot plot an empty log")
    iters = log.column("iter")
    values = {name: log.column(name) for name, _, _ in SERIES}
    ymin = min(min(v) for v in values.values())
    ymax = max(max(v) for v in values.values())
    if ymax - ymin < 1e-12:
        ymin, ymax = ymin - 1.0, ymax + 1.0
    xmin, xmax = iters[0], iters[-1]
    if xmax == xmin:
        xmin, xmax = xmin - 1, xmax + 1
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(x):
        return LEFT + (x - xmin) / (xmax - xmin) * pw

    def sy(y):
        return TOP + (ymax - y) / (ymax - ymin) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{LEFT + pw / 2:.2f}" y="18" text-anchor="middle" font-size="14">{title}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for y in _ticks(ymin, ymax):
        yy = sy(y)
        parts.append(f'<line x1="{LEFT - 4}" y1="{_fmt(yy)}" x2="{LEFT}" y2="{_fmt(yy)}" stroke="#444"/>')
        parts.append(f'<text x="{LEFT - 7}" y="{_fmt(yy + 4)}" text-anchor="end">{y:.3g}</text>')
    for x in _ticks(xmin, xmax):
        xx = sx(x)
        parts.append(f'<line x1="{_fmt(xx)}" y1="{TOP + ph}" x2="{_fmt(xx)}" y2="{TOP + ph + 4}" stroke="#444"/>')
        parts.append(f'<text x="{_fmt(xx)}" y="{TOP + ph + 18}" text-anchor="middle">{x:.0f}</text>')
    parts.append(f'<text x="{LEFT + pw / 2:.2f}" y="{HEIGHT - 10}" text-anchor="middle">iteration</text>')
    parts.append(f'<text x="18" y="{TOP + ph / 2:.2f}" text-anchor="middle" '
                 f'transform="rotate(-90 18 {TOP + ph / 2:.2f})">score</text>')
    for name, _, color in SERIES:
        pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(iters, values[name]))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
    lx = LEFT + pw + 15
    for k, (_, label, color) in enumerate(SERIES):
        y = TOP + 15 + 20 * k
        parts.append(f'<line x1="{lx}" y1="{y}" x2="{lx + 20}" y2="{y}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 26}" y="{y + 4}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
