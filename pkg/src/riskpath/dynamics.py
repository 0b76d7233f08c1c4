"""Kinematic bicycle plant and additive state disturbances."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numba
import numpy as np

CHANNELS = ("x", "y", "psi", "v")
NX = 4
NU = 2

TWO_PI = 2.0 * math.pi


class State(NamedTuple):
    x: float
    y: float
    psi: float
    v: float


class ControlInput(NamedTuple):
    accel: float
    steer: float


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 0.09
    dt: float = 0.05
    accel_bounds: tuple[float, float] = (-3.0, 3.0)
    steer_bounds: tuple[float, float] = (-0.45, 0.45)

    def __post_init__(self):
        if not self.wheelbase > 0:
            raise ValueError("wheelbase must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for lo, hi in (self.accel_bounds, self.steer_bounds):
            if not lo <= hi:
                raise ValueError(f"bounds not ordered: ({lo}, {hi})")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.accel_bounds[0], self.steer_bounds[0]])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.accel_bounds[1], self.steer_bounds[1]])

    def clamp(self, u):
        """Clamp controls (any array with a trailing axis of 2) to the actuator box."""
        return np.clip(np.asarray(u, dtype=float), self.lower, self.upper)


@numba.njit(cache=True, inline="always")
def wrap_angle(a):
    r = a % TWO_PI
    if r > math.pi:
        r -= TWO_PI
    return r


@numba.njit(cache=True, inline="always")
def bicycle_step(x, y, psi, v, accel, steer, wheelbase, dt):
    nx = x + v * math.cos(psi) * dt
    ny = y + v * math.sin(psi) * dt
    npsi = psi + v * (math.tan(steer) * dt / wheelbase)
    nv = v + accel * dt
    return nx, ny, wrap_angle(npsi), nv


def step_nominal(s, u, p: VehicleParams) -> State:
    a, d = p.clamp(u)
    return State(*bicycle_step(float(s[0]), float(s[1]), float(s[2]), float(s[3]),
                               float(a), float(d), p.wheelbase, p.dt))


def step_disturbed(s, u, w, p: VehicleParams) -> State:
    """Nominal step followed by the additive state disturbance ``w``.

    ``w`` is expected to be zero outside the model's channel mask, which is
    what :func:`sample_disturbance` produces.
    """
    n = step_nominal(s, u, p)
    w = np.asarray(w, dtype=float)
    return State(n.x + w[0], n.y + w[1], wrap_angle(n.psi + w[2]), n.v + w[3])


GAUSSIAN = "gaussian"
UNIFORM = "uniform"
IMPULSE = "impulse"
KINDS = (GAUSSIAN, UNIFORM, IMPULSE)

_DEFAULT_MASK = {GAUSSIAN: CHANNELS, UNIFORM: CHANNELS, IMPULSE: ("x", "y")}


def _vec(value) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=float), (NX,)).copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class DisturbanceModel:
    """Additive disturbance on the plant state.

    ``covariance`` (gaussian, diagonal) and ``half_width`` (uniform) are
    per-channel in simulator units. The impulse variant fires with
    ``probability`` per step and then jumps by ``magnitude`` in a uniformly
    random direction over the masked channels.
    """

    kind: str = GAUSSIAN
    covariance: np.ndarray = field(default_factory=lambda: _vec(0.0))
    half_width: np.ndarray = field(default_factory=lambda: _vec(0.0))
    probability: float = 0.0
    magnitude: float = 0.0
    mask: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        object.__setattr__(self, "covariance", _vec(self.covariance))
        object.__setattr__(self, "half_width", _vec(self.half_width))
        if self.mask is None:
            object.__setattr__(self, "mask", _DEFAULT_MASK[self.kind])
        object.__setattr__(self, "mask", tuple(self.mask))
        unknown = set(self.mask) - set(CHANNELS)
        if unknown:
            raise ValueError(f"unknown channels in mask: {sorted(unknown)}")
        if np.any(self.covariance < 0) or np.any(self.half_width < 0):
            raise ValueError("covariance and half_width must be nonnegative")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")
        if self.magnitude < 0:
            raise ValueError("magnitude must be nonnegative")

    def __eq__(self, other):
        if not isinstance(other, DisturbanceModel):
            return NotImplemented
        return (self.kind == other.kind and self.mask == other.mask
                and np.array_equal(self.covariance, other.covariance)
                and np.array_equal(self.half_width, other.half_width)
                and self.probability == other.probability
                and self.magnitude == other.magnitude)

    @property
    def channel_index(self) -> np.ndarray:
        return np.array([CHANNELS.index(c) for c in CHANNELS if c in self.mask], dtype=np.intp)

    def std(self) -> np.ndarray:
        """Per-channel standard deviation of one draw (zero on unmasked channels)."""
        out = np.zeros(NX)
        idx = self.channel_index
        if self.kind == GAUSSIAN:
            out[idx] = np.sqrt(self.covariance[idx])
        elif self.kind == UNIFORM:
            out[idx] = self.half_width[idx] / math.sqrt(3.0)
        else:
            out[idx] = self.magnitude * math.sqrt(self.probability / max(len(idx), 1))
        return out

    def is_zero(self) -> bool:
        return not np.any(self.std() > 0)


def sample_disturbance(model: DisturbanceModel, rng: np.random.Generator, shape=()) -> np.ndarray:
    """Draw disturbance vectors of shape ``shape + (4,)`` from ``rng``.

    The number of values consumed depends only on ``model`` and ``shape``, so a
    counter-addressed generator yields the same block on every call.
    """
    shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
    idx = model.channel_index
    out = np.zeros(shape + (NX,))
    if idx.size == 0:
        return out
    k = idx.size
    if model.kind == GAUSSIAN:
        z = rng.standard_normal(shape + (k,))
        out[..., idx] = z * np.sqrt(model.covariance[idx])
    elif model.kind == UNIFORM:
        z = rng.uniform(-1.0, 1.0, shape + (k,))
        out[..., idx] = z * model.half_width[idx]
    else:
        fire = rng.random(shape) < model.probability
        z = rng.standard_normal(shape + (k,))
        norm = np.linalg.norm(z, axis=-1, keepdims=True)
        norm[norm == 0.0] = 1.0
        out[..., idx] = np.where(fire[..., None], model.magnitude * z / norm, 0.0)
    return out
