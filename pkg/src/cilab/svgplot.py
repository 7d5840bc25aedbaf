"""Self-contained SVG 1.1 charts: accuracy bars with SEM whiskers, and
accuracy-vs-sample-count lines on a log axis.  No plotting dependency;
output is deterministic text."""

from __future__ import annotations

import math

from .exceptions import UsageError

_W, _H = 640, 400
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 70, 20, 30, 80


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="20" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{title}</text>',
    ]


def _y_axis(parts: list[str], lo: float, hi: float, label: str):
    span_h = _H - _MARGIN_T - _MARGIN_B

    def y_of(v):
        return _MARGIN_T + span_h * (1.0 - (v - lo) / (hi - lo))

    for frac in range(0, 11, 2):
        v = lo + (hi - lo) * frac / 10.0
        y = y_of(v)
        parts.append(f'<line x1="{_MARGIN_L}" y1="{y:.1f}" x2="{_W - _MARGIN_R}" y2="{y:.1f}" '
                     f'stroke="#dddddd" stroke-width="1"/>')
        parts.append(f'<text x="{_MARGIN_L - 6}" y="{y + 4:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{v:.0f}</text>')
    parts.append(f'<text x="16" y="{_MARGIN_T + span_h / 2:.1f}" font-family="sans-serif" '
                 f'font-size="12" transform="rotate(-90 16 {_MARGIN_T + span_h / 2:.1f})" '
                 f'text-anchor="middle">{label}</text>')
    return y_of


def bar_chart_svg(labels, means_pct, sems_pct, title="Final test accuracy (%)") -> str:
    """Bars with +-SEM whiskers; values in percent."""
    if not labels:
        raise UsageError("no data series to plot")
    if not (len(labels) == len(means_pct) == len(sems_pct)):
        raise UsageError("labels, means, and sems must align")
    parts = _header(title)
    hi = max(100.0, max(m + s for m, s in zip(means_pct, sems_pct)) * 1.05)
    y_of = _y_axis(parts, 0.0, hi, "accuracy (%)")
    span_w = _W - _MARGIN_L - _MARGIN_R
    slot = span_w / len(labels)
    bar_w = slot * 0.6
    base = y_of(0.0)
    for i, (name, m, s) in enumerate(zip(labels, means_pct, sems_pct)):
        cx = _MARGIN_L + slot * (i + 0.5)
        top = y_of(m)
        parts.append(f'<rect x="{cx - bar_w / 2:.1f}" y="{top:.1f}" width="{bar_w:.1f}" '
                     f'height="{base - top:.1f}" fill="#4878a8"/>')
        if s > 0:
            y1, y2 = y_of(m + s), y_of(m - s)
            parts.append(f'<line x1="{cx:.1f}" y1="{y1:.1f}" x2="{cx:.1f}" y2="{y2:.1f}" '
                         f'stroke="black" stroke-width="1.5"/>')
            for yy in (y1, y2):
                parts.append(f'<line x1="{cx - 4:.1f}" y1="{yy:.1f}" x2="{cx + 4:.1f}" '
                             f'y2="{yy:.1f}" stroke="black" stroke-width="1.5"/>')
        parts.append(f'<text x="{cx:.1f}" y="{base + 12:.1f}" font-family="sans-serif" '
                     f'font-size="10" text-anchor="end" '
                     f'transform="rotate(-35 {cx:.1f} {base + 12:.1f})">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def line_chart_svg(x_values, means_pct, sems_pct,
                   title="Accuracy vs importance samples",
                   x_label="importance samples (log scale)") -> str:
    """A single series over a log-scaled x axis, with SEM whiskers."""
    if not x_values:
        raise UsageError("no data series to plot")
    parts = _header(title)
    lo = max(0.0, min(m - s for m, s in zip(means_pct, sems_pct)) - 2.0)
    hi = min(100.0, max(m + s for m, s in zip(means_pct, sems_pct)) + 2.0)
    y_of = _y_axis(parts, lo, hi, "accuracy (%)")
    lx = [math.log10(x) for x in x_values]
    x_lo, x_hi = min(lx), max(lx)
    span_w = _W - _MARGIN_L - _MARGIN_R

    def x_of(v):
        if x_hi == x_lo:
            return _MARGIN_L + span_w / 2
        return _MARGIN_L + span_w * (math.log10(v) - x_lo) / (x_hi - x_lo)

    pts = " ".join(f"{x_of(x):.1f},{y_of(m):.1f}" for x, m in zip(x_values, means_pct))
    parts.append(f'<polyline points="{pts}" fill="none" stroke="#4878a8" stroke-width="2"/>')
    for x, m, s in zip(x_values, means_pct, sems_pct):
        cx = x_of(x)
        parts.append(f'<circle cx="{cx:.1f}" cy="{y_of(m):.1f}" r="3" fill="#4878a8"/>')
        if s > 0:
            parts.append(f'<line x1="{cx:.1f}" y1="{y_of(m + s):.1f}" x2="{cx:.1f}" '
                         f'y2="{y_of(m - s):.1f}" stroke="black" stroke-width="1"/>')
        parts.append(f'<text x="{cx:.1f}" y="{_H - _MARGIN_B + 16}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{x:g}</text>')
    parts.append(f'<text x="{_MARGIN_L + span_w / 2:.1f}" y="{_H - 20}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12">{x_label}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
