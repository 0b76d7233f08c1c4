"""Static SVG of the track, its obstacles and logged trajectories."""
from __future__ import annotations

import math
from xml.sax.saxutils import quoteattr

import numpy as np

from .track import Track

# stroke colors per controller; anything else falls back to grey
COLORS = {"mppi": "#2ca02c", "ra-mppi": "#d62728"}
MARGIN = 0.25
SCALE = 100.0  # px per m


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _outline(track: Track, e: float, step: float = 0.02) -> np.ndarray:
    n = max(8, math.ceil(track.total_length / step))
    s = np.linspace(0.0, track.total_length, n, endpoint=False)
    return np.array([track.point_at(float(si), e) for si in s])


def _bounds(track: Track, logs) -> tuple[float, float, float, float]:
    pts = [_outline(track, track.half_width, 0.1), _outline(track, -track.half_width, 0.1)]
    pts += [np.asarray(xy, dtype=float) for _, xy, _ in logs if len(xy)]
    allp = np.concatenate(pts)
    lo = allp.min(axis=0) - MARGIN
    hi = allp.max(axis=0) + MARGIN
    return lo[0], lo[1], hi[0], hi[1]


def render_svg(track: Track, logs=()) -> str:
    """Render the track and trajectory logs as an SVG document.

    ``logs`` is a sequence of ``(label, xy, collisions)`` with ``xy`` an
    (L, 2) array of positions and ``collisions`` a list of (x, y) event
    positions. Output bytes depend only on the inputs.
    """
    logs = [(str(label), np.asarray(xy, dtype=float).reshape(-1, 2), list(hits))
            for label, xy, hits in logs]
    x0, y0, x1, y1 = _bounds(track, logs)
    width, height = (x1 - x0) * SCALE, (y1 - y0) * SCALE

    def px(x, y):
        # flip y so the plot reads like a map
        return _fmt((x - x0) * SCALE), _fmt((y1 - y) * SCALE)

    def path(points, closed=True):
        cmds = []
        for i, (x, y) in enumerate(points):
            a, b = px(x, y)
            cmds.append(f"{'M' if i == 0 else 'L'}{a},{b}")
        return " ".join(cmds) + (" Z" if closed else "")

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" height="{_fmt(height)}" '
        f'viewBox="0 0 {_fmt(width)} {_fmt(height)}">',
        '<rect class="background" x="0" y="0" width="100%" height="100%" fill="white"/>',
    ]
    for name, e in (("boundary left", track.half_width), ("boundary right", -track.half_width)):
        out.append(f'<path class="{name}" d="{path(_outline(track, e))}" '
                   'fill="none" stroke="black" stroke-width="1.5"/>')
    out.append(f'<path class="centerline" d="{path(_outline(track, 0.0))}" '
               'fill="none" stroke="#888888" stroke-width="0.8" stroke-dasharray="4 3"/>')
    for ob in track.obstacles:
        cx, cy = px(*ob.center)
        out.append(f'<circle class="obstacle" cx="{cx}" cy="{cy}" r="{_fmt(ob.radius * SCALE)}" '
                   'fill="#444444" fill-opacity="0.6"/>')
    for label, xy, hits in logs:
        color = COLORS.get(label, "#555555")
        cls = quoteattr(f"trajectory {label}")
        pts = " ".join(",".join(px(x, y)) for x, y in xy)
        out.append(f'<polyline class={cls} points="{pts}" fill="none" stroke="{color}" '
                   'stroke-width="1" stroke-opacity="0.8"/>')
        for x, y in hits:
            cx, cy = px(x, y)
            out.append(f'<circle class={quoteattr(f"collision {label}")} cx="{cx}" cy="{cy}" '
                       f'r="3.00" fill="none" stroke="{color}" stroke-width="1.2"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
