"""Sampling-based MPC: baseline MPPI and its CVaR-filtered variant."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import risk as riskmod
from . import rng as rngmod
from .dynamics import NU, NX, DisturbanceModel, VehicleParams, sample_disturbance
from .rollout import nominal_costs, risk_costs
from .track import CostWeights, Track

log = logging.getLogger(__name__)

MPPI = "mppi"
RA_MPPI = "ra-mppi"
_EMPTY_TRAJ = np.zeros((0, 0, NX))


class DegenerateBatch(RuntimeError):
    """Every sample weight is zero, so no weighted average exists."""


@dataclass(frozen=True)
class MppiParams:
    K: int = 30
    M: int = 256
    lam: float = 0.35
    gamma: float = 0.0
    eta: float = 0.2
    sigma_eps: tuple[float, float] = (1.0, 0.04)  # variances: accel, steer
    rho: float = 0.0  # lag-one correlation of the noise along the horizon

    def __post_init__(self):
        object.__setattr__(self, "sigma_eps", tuple(float(s) for s in self.sigma_eps))
        if self.K < 1 or self.M < 1:
            raise ValueError("K and M must be at least 1")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not 0.0 <= self.gamma <= self.lam:
            raise ValueError("gamma must lie in [0, lambda]")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if len(self.sigma_eps) != NU or min(self.sigma_eps) <= 0:
            raise ValueError("sigma_eps needs one positive variance per control channel")

    @property
    def n_zero_mean(self) -> int:
        return min(self.M, math.ceil(self.eta * self.M - 1e-9))

    @property
    def n_warm(self) -> int:
        return self.M - self.n_zero_mean


class NominalRollout(NamedTuple):
    trajectory: np.ndarray  # (K+1, 4)
    cost: float
    controls: np.ndarray  # (K, 2)
    noise: np.ndarray  # (K, 2)


def sample_control_batch(mean, p: MppiParams, rng: np.random.Generator,
                         vehicle: VehicleParams | None = None):
    """Draw M perturbed control sequences around ``mean`` (K, 2).

    The last ``ceil(eta * M)`` samples are pure noise around zero. Every
    noise step is N(0, sigma_eps); with ``rho > 0`` consecutive steps follow a
    stationary AR(1) process instead of being independent. Returns
    ``(u, eps)``, both (M, K, 2); ``u`` is clamped to the actuator box when
    ``vehicle`` is given.
    """
    mean = np.asarray(mean, dtype=float)
    if mean.shape != (p.K, NU):
        raise ValueError(f"mean must have shape ({p.K}, {NU}), got {mean.shape}")
    eps = rng.standard_normal((p.M, p.K, NU))
    if p.rho > 0:
        innov = math.sqrt(1.0 - p.rho * p.rho)
        for k in range(1, p.K):
            eps[:, k] = p.rho * eps[:, k - 1] + innov * eps[:, k]
    eps *= np.sqrt(np.asarray(p.sigma_eps))
    u = eps.copy()
    u[: p.n_warm] += mean
    if vehicle is not None:
        u = vehicle.clamp(u)
    return u, eps


def _cost_args(track: Track, w: CostWeights):
    return track.table, track.total_length, track.obstacle_table, track.half_width, w.as_array()


def progress_scale_for(track: Track, unit: str) -> float:
    if unit == "lap":
        return 1.0 / track.total_length
    if unit == "m":
        return 1.0
    raise ValueError(f"unknown progress unit {unit!r}")


def rollout_nominal(x0, u, track: Track, weights: CostWeights, p: MppiParams,
                    vehicle: VehicleParams, mean=None, progress_unit: str = "lap",
                    noise=None) -> NominalRollout:
    """Roll one control sequence through the nominal model and cost it.

    ``mean`` is the iteration's mean sequence used by the control term
    (zeros when omitted).
    """
    u = np.ascontiguousarray(u, dtype=float).reshape(1, -1, NU)
    K = u.shape[1]
    mean = np.zeros((K, NU)) if mean is None else np.asarray(mean, dtype=float)
    out = np.zeros(1)
    traj = np.zeros((1, K + 1, NX))
    nominal_costs(np.asarray(x0, dtype=float), u, mean, 1.0 / np.asarray(p.sigma_eps), p.gamma,
                  *_cost_args(track, weights), progress_scale_for(track, progress_unit),
                  vehicle.wheelbase, vehicle.dt, out, traj)
    eps = np.zeros((K, NU)) if noise is None else np.asarray(noise, dtype=float)
    return NominalRollout(traj[0], float(out[0]), u[0], eps)


def compute_weights(costs, lam: float):
    """Exponential weights relative to the best sample.

    Non-finite costs get weight zero. Returns ``(weights, n_rejected)``.
    """
    costs = np.asarray(costs, dtype=float)
    ok = np.isfinite(costs)
    weights = np.zeros_like(costs)
    if ok.any():
        beta = costs[ok].min()
        weights[ok] = np.exp(-(costs[ok] - beta) / lam)
    return weights, int((~ok).sum())


def weighted_update(controls, weights) -> np.ndarray:
    """Weighted mean of control sequences, reduced in a fixed order."""
    controls = np.asarray(controls, dtype=float)
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    if not total > 0:
        raise DegenerateBatch("all sample weights are zero")
    # normalize first so a single sample (or one dominant weight) comes back exactly
    return ((weights / total)[:, None, None] * controls).sum(axis=0)


def shift_mean(v_plus) -> np.ndarray:
    """Drop the executed first control and repeat the last one."""
    v_plus = np.asarray(v_plus, dtype=float)
    return np.concatenate([v_plus[1:], v_plus[-1:]], axis=0)


def default_threads() -> int:
    env = os.environ.get("RISKPATH_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class IterationInfo:
    min_cost: float
    n_rejected: int
    n_violating: int = 0
    mean_cvar: float = float("nan")
    reports: list = field(default_factory=list)


class Controller:
    """One receding-horizon optimizer. Use from a single driving thread.

    ``kind`` is ``"mppi"`` or ``"ra-mppi"``. The risk rollouts use
    ``risk_model``, normally the plant's own disturbance model.
    """

    max_resamples = 8

    def __init__(self, track: Track, vehicle: VehicleParams, weights: CostWeights,
                 params: MppiParams, kind: str = MPPI, risk: riskmod.RiskParams | None = None,
                 risk_model: DisturbanceModel | None = None, seed: int = 0,
                 threads: int | None = None, progress_unit: str = "lap", block: int = 32,
                 keep_reports: bool = False):
        if kind not in (MPPI, RA_MPPI):
            raise ValueError(f"unknown controller kind {kind!r}")
        if kind == RA_MPPI and (risk is None or risk_model is None):
            raise ValueError("ra-mppi needs risk params and a disturbance model")
        self.track = track
        self.vehicle = vehicle
        self.weights = weights
        self.params = params
        self.kind = kind
        self.risk = risk
        self.risk_model = risk_model
        self.seed = int(seed)
        self.threads = threads or default_threads()
        self.progress_scale = progress_scale_for(track, progress_unit)
        self.block = block
        self.keep_reports = keep_reports
        self._sig_inv = 1.0 / np.asarray(params.sigma_eps)
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def trajectories_per_iteration(self) -> int:
        if self.kind == RA_MPPI:
            return self.params.M * (self.risk.N + 1)
        return self.params.M

    def _blocks(self, M):
        return [(i, min(i + self.block, M)) for i in range(0, M, self.block)]

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(i) for i in items]
        return list(self._pool.map(fn, items))

    def nominal(self, x0, u, mean) -> np.ndarray:
        x0 = np.asarray(x0, dtype=float)
        out = np.empty(u.shape[0])
        args = _cost_args(self.track, self.weights)

        def run(span):
            a, b = span
            nominal_costs(x0, u[a:b], mean, self._sig_inv, self.params.gamma, *args,
                          self.progress_scale, self.vehicle.wheelbase, self.vehicle.dt,
                          out[a:b], _EMPTY_TRAJ)

        self._map(run, self._blocks(u.shape[0]))
        return out

    def risk_samples(self, x0, u, iteration: int) -> np.ndarray:
        """Risk cost of N disturbed rollouts per candidate, shape (M, N)."""
        x0 = np.asarray(x0, dtype=float)
        M, K = u.shape[:2]
        N = self.risk.N
        out = np.empty((M, N))
        args = _cost_args(self.track, self.weights)
        c = args[-1]

        if self.risk.common_noise:
            gen = rngmod.stream(self.seed, rngmod.RISK, iteration)
            shared = sample_disturbance(self.risk_model, gen, (N, K))

        def run(span):
            a, b = span
            if self.risk.common_noise:
                w = np.broadcast_to(shared, (b - a, N, K, NX))
            else:
                w = np.empty((b - a, N, K, NX))
                for m in range(a, b):
                    gen = rngmod.stream(self.seed, rngmod.RISK, iteration, m)
                    w[m - a] = sample_disturbance(self.risk_model, gen, (N, K))
            risk_costs(x0, u[a:b], w, *args[:-1], c, self.vehicle.wheelbase, self.vehicle.dt,
                       out[a:b])

        self._map(run, self._blocks(M))
        return out

    def iterate(self, x0, mean, iteration: int):
        """Optimize once from state ``x0`` around ``mean``; return ``(v_plus, info)``."""
        p = self.params
        for attempt in range(self.max_resamples):
            gen = rngmod.stream(self.seed, rngmod.CONTROL, iteration, attempt)
            u, _ = sample_control_batch(mean, p, gen, self.vehicle)
            S = self.nominal(x0, u, mean)
            info = IterationInfo(float(np.min(S)), 0)
            if self.kind == RA_MPPI:
                reports = riskmod.evaluate(self.risk_samples(x0, u, iteration), self.risk)
                S = riskmod.filter_costs(S, reports)
                info.n_violating = sum(r.violation_cost > 0 for r in reports)
                info.mean_cvar = float(np.mean([r.cvar for r in reports]))
                if self.keep_reports:
                    info.reports = reports
            weights, info.n_rejected = compute_weights(S, p.lam)
            try:
                return weighted_update(u, weights), info
            except DegenerateBatch:
                log.warning("degenerate batch at iteration %d, resampling", iteration)
        raise DegenerateBatch(f"no usable batch after {self.max_resamples} attempts")
