"""Self-contained SVG line and bar charts for sweep and loss-curve output.

CSV stays the canonical record; these charts are a convenience for eyes,
so the layout is deliberately plain: fixed canvas, linear axes, one color
per series.
"""

from __future__ import annotations

from ..errors import PreconditionError

_W, _H = 640, 400
_MARGIN = 56
_COLORS = ("#1f6fb2", "#c23b22", "#2e8b57", "#8a2be2", "#b8860b", "#444444")


def _scale(values: list[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        hi = lo + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="monospace" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]


def _axes(x0: float, x1: float, y0: float, y1: float) -> list[str]:
    left, right = _MARGIN, _W - _MARGIN
    top, bottom = _MARGIN, _H - _MARGIN
    parts = [
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>',
        f'<text x="{left}" y="{bottom + 16}" text-anchor="middle">{x0:.4g}</text>',
        f'<text x="{right}" y="{bottom + 16}" text-anchor="middle">{x1:.4g}</text>',
        f'<text x="{left - 6}" y="{bottom}" text-anchor="end">{y0:.4g}</text>',
        f'<text x="{left - 6}" y="{top + 4}" text-anchor="end">{y1:.4g}</text>',
    ]
    return parts


def line_chart(series: dict[str, tuple[list[float], list[float]]], path, title: str = "") -> None:
    """Write a multi-series line chart; each series is (xs, ys)."""
    if not series:
        raise PreconditionError("line chart needs at least one series")
    all_x = [x for xs, _ in series.values() for x in xs]
    all_y = [y for _, ys in series.values() for y in ys]
    if not all_x:
        raise PreconditionError("line chart series are empty")
    x0, x1 = _scale(all_x)
    y0, y1 = _scale(all_y)
    left, right = _MARGIN, _W - _MARGIN
    top, bottom = _MARGIN, _H - _MARGIN

    def px(x: float) -> float:
        return left + (x - x0) / (x1 - x0) * (right - left)

    def py(y: float) -> float:
        return bottom - (y - y0) / (y1 - y0) * (bottom - top)

    parts = _header(title) + _axes(x0, x1, y0, y1)
    for i, (name, (xs, ys)) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{right - 4}" y="{top + 14 * (i + 1)}" text-anchor="end" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def bar_chart(labels: list[str], values: list[float], path, title: str = "") -> None:
    """Write a single-series bar chart with labels under the bars."""
    if not labels or len(labels) != len(values):
        raise PreconditionError("bar chart needs matching nonempty labels and values")
    y0 = min(0.0, min(values))
    _, y1 = _scale(values + [0.0])
    left, right = _MARGIN, _W - _MARGIN
    top, bottom = _MARGIN, _H - _MARGIN
    span = (right - left) / len(values)
    width = span * 0.7

    def py(y: float) -> float:
        return bottom - (y - y0) / (y1 - y0) * (bottom - top)

    parts = _header(title) + _axes(0, len(values), y0, y1)
    for i, (label, value) in enumerate(zip(labels, values)):
        x = left + i * span + (span - width) / 2
        y_top = py(max(value, 0.0))
        h = abs(py(value) - py(0.0))
        parts.append(
            f'<rect x="{x:.1f}" y="{y_top:.1f}" width="{width:.1f}" height="{h:.1f}" '
            f'fill="{_COLORS[0]}"/>'
        )
        parts.append(
            f'<text x="{x + width / 2:.1f}" y="{bottom + 16}" text-anchor="middle">{label}</text>'
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
