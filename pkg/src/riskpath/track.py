"""Closed race track built from straights and circular arcs, plus its costs.

All cost terms depend on position only. The scalar kernels in this module are
compiled with numba and shared by the public helpers and by the batched
rollouts, so a cost evaluated in a test and a cost evaluated inside the
controller come from the same code.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numba
import numpy as np

from . import rng as rngmod

STRAIGHT = 0
ARC = 1

# column layout of the packed segment table
_KIND, _SX, _SY, _SH, _LEN, _RAD, _TURN, _CX, _CY, _TH0, _S0, _SWEEP, _TX, _TY = range(14)

CLOSURE_TOL = 1e-9
TIE_TOL = 1e-12  # squared-distance margin that counts as a projection tie


@dataclass(frozen=True)
class Straight:
    length: float

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError("straight length must be positive")


@dataclass(frozen=True)
class Arc:
    radius: float
    angle: float  # radians, positive
    direction: str = "left"

    def __post_init__(self):
        if not self.radius > 0 or not self.angle > 0:
            raise ValueError("arc radius and angle must be positive")
        if self.angle >= 2 * math.pi:
            raise ValueError("arc angle must be below a full turn")
        if self.direction not in ("left", "right"):
            raise ValueError(f"arc direction must be left or right, got {self.direction!r}")

    @property
    def length(self) -> float:
        return self.radius * self.angle


@dataclass(frozen=True)
class Obstacle:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("obstacle radius must be positive")


class Projection(NamedTuple):
    s: float
    e: float
    segment: int


@dataclass(frozen=True)
class CostWeights:
    c1: float = 2.0
    c2: float = 1.0
    c3: float = 0.1
    c4: float = 0.6
    c5: float = 2.0

    def __post_init__(self):
        for name in ("c1", "c2", "c3", "c4", "c5"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def as_array(self) -> np.ndarray:
        return np.array([self.c1, self.c2, self.c3, self.c4, self.c5])


def _build_table(segments, start=(0.0, 0.0, 0.0)):
    table = np.zeros((len(segments), 14))
    x, y, h = start
    s = 0.0
    for i, seg in enumerate(segments):
        row = table[i]
        row[_SX], row[_SY], row[_SH], row[_S0] = x, y, h, s
        row[_LEN] = seg.length
        row[_TX], row[_TY] = math.cos(h), math.sin(h)
        if isinstance(seg, Straight):
            row[_KIND] = STRAIGHT
            x += seg.length * math.cos(h)
            y += seg.length * math.sin(h)
        else:
            turn = 1.0 if seg.direction == "left" else -1.0
            row[_KIND] = ARC
            row[_RAD], row[_TURN], row[_SWEEP] = seg.radius, turn, seg.angle
            cx = x - turn * seg.radius * math.sin(h)
            cy = y + turn * seg.radius * math.cos(h)
            row[_CX], row[_CY] = cx, cy
            th0 = math.atan2(y - cy, x - cx)
            row[_TH0] = th0
            th1 = th0 + turn * seg.angle
            x = cx + seg.radius * math.cos(th1)
            y = cy + seg.radius * math.sin(th1)
            h = h + turn * seg.angle
        s += seg.length
    return table, (x, y, h), s


@dataclass(frozen=True, eq=False)
class Track:
    segments: tuple
    half_width: float
    obstacles: tuple[Obstacle, ...] = ()
    start: tuple[float, float, float] = (0.0, 0.0, 0.0)
    table: np.ndarray = field(init=False, repr=False)
    obstacle_table: np.ndarray = field(init=False, repr=False)
    total_length: float = field(init=False)

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        if not self.segments:
            raise ValueError("track needs at least one segment")
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        table, end, total = _build_table(self.segments, self.start)
        x0, y0, h0 = self.start
        gap = math.hypot(end[0] - x0, end[1] - y0)
        dh = abs(math.remainder(end[2] - h0, 2 * math.pi))
        if gap > CLOSURE_TOL or dh > CLOSURE_TOL:
            raise ValueError(f"track does not close: position gap {gap:.3g} m, heading gap {dh:.3g} rad")
        table.flags.writeable = False
        obs = np.array([[o.center[0], o.center[1], o.radius] for o in self.obstacles]).reshape(-1, 3)
        obs.flags.writeable = False
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "obstacle_table", obs)
        object.__setattr__(self, "total_length", float(total))

    def __eq__(self, other):
        if not isinstance(other, Track):
            return NotImplemented
        return (self.segments == other.segments and self.half_width == other.half_width
                and self.obstacles == other.obstacles and tuple(self.start) == tuple(other.start))

    def with_obstacles(self, obstacles) -> "Track":
        return Track(self.segments, self.half_width, tuple(obstacles), self.start)

    def pose_at(self, s: float) -> tuple[float, float, float]:
        """Centerline point and tangent heading at arc length ``s``."""
        s = s % self.total_length
        i = int(np.searchsorted(self.table[:, _S0], s, side="right") - 1)
        row = self.table[max(i, 0)]
        t = s - row[_S0]
        if row[_KIND] == STRAIGHT:
            h = row[_SH]
            return float(row[_SX] + t * math.cos(h)), float(row[_SY] + t * math.sin(h)), float(h)
        turn, rad = row[_TURN], row[_RAD]
        th = row[_TH0] + turn * t / rad
        return (float(row[_CX] + rad * math.cos(th)), float(row[_CY] + rad * math.sin(th)),
                math.remainder(row[_SH] + turn * t / rad, 2 * math.pi))

    def point_at(self, s: float, e: float = 0.0) -> tuple[float, float]:
        """Un-project: centerline point at ``s`` shifted ``e`` to the left."""
        x, y, h = self.pose_at(s)
        return x - e * math.sin(h), y + e * math.cos(h)


def stadium(length: float = 10.9, short_straight: float = 1.5, corner_radius: float = 0.3,
            half_width: float = 0.3, obstacles=()) -> Track:
    """Rounded rectangle, counter-clockwise, whose centerline totals ``length``."""
    long_straight = (length - 2 * math.pi * corner_radius) / 2 - short_straight
    if long_straight <= 0:
        raise ValueError("length too short for the requested straights and corners")
    corner = Arc(corner_radius, math.pi / 2, "left")
    segs = (Straight(long_straight), corner, Straight(short_straight), corner,
            Straight(long_straight), corner, Straight(short_straight), corner)
    return Track(segs, half_width, tuple(obstacles))


def place_obstacles(track: Track, count: int = 10, radius: float = 0.1, seed: int = 0,
                    corridor: float = 0.15, min_spacing: float = 0.6,
                    keep_clear: tuple[float, float] = (0.8, 0.3),
                    max_tries: int = 100_000) -> tuple[Obstacle, ...]:
    """Scatter ``count`` obstacles along the track with a seeded rejection sampler.

    Each obstacle leaves a free gap of at least ``corridor`` on one side, and
    obstacles are at least ``min_spacing`` apart in arc length so two of them
    never close the track together. ``keep_clear`` is the (after, before)
    distance around the start line that stays empty.
    """
    hw = track.half_width
    # largest lateral offset that still keeps one gap >= corridor inside the track
    max_off = hw - radius
    if 2 * (hw - radius) < corridor:
        raise ValueError("track too narrow for the requested corridor")
    gen = rngmod.stream(seed, rngmod.PLACEMENT)
    L = track.total_length
    lo, hi = keep_clear[0], L - keep_clear[1]
    chosen: list[float] = []
    out = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > max_tries:
            raise ValueError("could not place obstacles with the requested spacing")
        s = gen.uniform(lo, hi)
        e = gen.uniform(-max_off, max_off)
        if hw + abs(e) - radius < corridor:
            continue
        if any(min(abs(s - c), L - abs(s - c)) < min_spacing for c in chosen):
            continue
        chosen.append(s)
        x, y = track.point_at(s, e)
        out.append(Obstacle((float(x), float(y)), radius))
    return tuple(out)


@numba.njit(cache=True, nogil=True)
def _wrap(a):
    r = a % (2.0 * math.pi)
    if r > math.pi:
        r -= 2.0 * math.pi
    return r


@numba.njit(cache=True, nogil=True)
def project_xy(px, py, table, total_length):
    """Nearest centerline point. Returns (s, e, segment index).

    Segments are scanned in index order and a later segment replaces the
    current best only when it is closer by more than ``TIE_TOL`` (squared
    distance), so geometric ties go to the lowest index even when rounding
    differs between segment types. Arcs are
    skipped when their radial distance |r - R|, a lower bound on the distance
    to the arc, cannot beat the current best.
    """
    best = np.inf
    best_s = 0.0
    best_e = 0.0
    best_i = 0
    for i in range(table.shape[0]):
        if table[i, 0] == 0.0:
            tx = table[i, 12]
            ty = table[i, 13]
            dx = px - table[i, 1]
            dy = py - table[i, 2]
            along = dx * tx + dy * ty
            lat = dy * tx - dx * ty
            length = table[i, 4]
            if along < 0.0:
                a = 0.0
            elif along > length:
                a = length
            else:
                a = along
            ox = dx - a * tx
            oy = dy - a * ty
            d2 = ox * ox + oy * oy
            if d2 < best - TIE_TOL:
                best = d2
                best_i = i
                best_s = table[i, 10] + a
                if a == along:
                    best_e = lat
                else:
                    best_e = math.copysign(math.sqrt(d2), lat)
        else:
            rad = table[i, 5]
            rx = px - table[i, 7]
            ry = py - table[i, 8]
            r = math.sqrt(rx * rx + ry * ry)
            lb = (r - rad) * (r - rad)
            if lb >= best - TIE_TOL:
                continue
            turn = table[i, 6]
            sweep = table[i, 11]
            phi = (turn * (math.atan2(ry, rx) - table[i, 9])) % (2.0 * math.pi)
            if phi <= sweep:
                best = lb
                best_i = i
                best_s = table[i, 10] + rad * phi
                best_e = turn * (rad - r)
            else:
                # nearest endpoint of the arc
                if phi - sweep < 2.0 * math.pi - phi:
                    ang = sweep
                else:
                    ang = 0.0
                th = table[i, 9] + turn * ang
                qx = table[i, 7] + rad * math.cos(th)
                qy = table[i, 8] + rad * math.sin(th)
                hd = table[i, 3] + turn * ang
                ox = px - qx
                oy = py - qy
                d2 = ox * ox + oy * oy
                if d2 < best - TIE_TOL:
                    best = d2
                    best_i = i
                    best_s = table[i, 10] + rad * ang
                    lat = oy * math.cos(hd) - ox * math.sin(hd)
                    best_e = math.copysign(math.sqrt(d2), lat)
    if best_s >= total_length:
        best_s -= total_length
    if best_s < 0.0:
        best_s += total_length
    return best_s, best_e, best_i


@numba.njit(cache=True, nogil=True)
def boundary_cost_scalar(d):
    c = math.atan(-100.0 * d) / math.pi + 0.5
    return c if c > 0.0 else 0.0


@numba.njit(cache=True, nogil=True)
def obstacle_count(px, py, obstacles):
    n = 0
    for j in range(obstacles.shape[0]):
        dx = px - obstacles[j, 0]
        dy = py - obstacles[j, 1]
        r = obstacles[j, 2]
        if dx * dx + dy * dy < r * r:
            n += 1
    return n


@numba.njit(cache=True, nogil=True)
def state_cost_xy(px, py, table, total_length, obstacles, half_width, c1, c2, c3):
    """Running cost at a position. Returns (cost, s)."""
    s, e, _ = project_xy(px, py, table, total_length)
    d = half_width - abs(e)
    q = c1 * boundary_cost_scalar(d) + c2 * obstacle_count(px, py, obstacles) + c3 * e * e
    return q, s


@numba.njit(cache=True, nogil=True)
def progress_delta_scalar(s_start, s_end, total_length):
    d = s_end - s_start
    half = 0.5 * total_length
    if d > half:
        d -= total_length
    elif d <= -half:
        d += total_length
    return d


@numba.njit(cache=True, nogil=True)
def terminal_cost_scalar(progress, c4, c5):
    c = c4 - c5 * progress
    return c if c > 0.0 else 0.0


def project(point, track: Track) -> Projection:
    s, e, i = project_xy(float(point[0]), float(point[1]), track.table, track.total_length)
    return Projection(s, e, int(i))


def boundary_distance(point, track: Track) -> float:
    """Signed distance to the nearest track edge, positive on the track."""
    return track.half_width - abs(project(point, track).e)


def boundary_cost(d: float) -> float:
    return boundary_cost_scalar(float(d))


def obstacle_cost(point, track: Track) -> int:
    """Number of obstacles whose disk strictly contains ``point``."""
    return int(obstacle_count(float(point[0]), float(point[1]), track.obstacle_table))


def running_cost(state, track: Track, w: CostWeights) -> float:
    q, _ = state_cost_xy(float(state[0]), float(state[1]), track.table, track.total_length,
                         track.obstacle_table, track.half_width, w.c1, w.c2, w.c3)
    return q


def terminal_cost(progress: float, w: CostWeights) -> float:
    """Clamped terminal cost for horizon progress ``progress``.

    The controller passes progress in the unit chosen by its
    ``progress_scale`` (meters by default).
    """
    return terminal_cost_scalar(float(progress), w.c4, w.c5)


def progress_delta(s_start: float, s_end: float, track: Track) -> float:
    """Shortest signed arc-length step from ``s_start`` to ``s_end`` across the start line."""
    return progress_delta_scalar(float(s_start), float(s_end), track.total_length)
