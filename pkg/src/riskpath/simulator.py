"""Closed-loop episodes, collision and lap bookkeeping, grid search, throughput."""
from __future__ import annotations

import dataclasses
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .config import Scenario
from .dynamics import State, sample_disturbance, step_disturbed
from .mppi import MPPI, RA_MPPI, Controller, shift_mean
from .track import Track, obstacle_count, progress_delta, project

log = logging.getLogger(__name__)

BOUNDARY = "boundary"
OBSTACLE = "obstacle"

TRAJECTORY_COLUMNS = ("t", "x", "y", "psi", "v", "s", "e", "d", "collision")


def detect_collision(state, track: Track) -> str | None:
    """Classify a state as inside an obstacle, off the track, or feasible (None).

    Obstacles take priority when both apply.
    """
    if obstacle_count(float(state[0]), float(state[1]), track.obstacle_table) > 0:
        return OBSTACLE
    if track.half_width - abs(project(state, track).e) < 0:
        return BOUNDARY
    return None


class CollisionCounter:
    """Counts rising edges into the infeasible set; a continuous dwell is one event."""

    def __init__(self):
        self.inside = False
        self.events: list[tuple[float, float, float, str]] = []

    def update(self, kind: str | None, t: float, x: float, y: float) -> str | None:
        hit = None
        if kind is not None and not self.inside:
            hit = kind
            self.events.append((t, x, y, kind))
        self.inside = kind is not None
        return hit


class LapTracker:
    """Lap completions from cumulative signed progress; backing up undoes progress."""

    def __init__(self, track: Track, s0: float, dt: float):
        self.length = track.total_length
        self.track = track
        self.s = s0
        self.dt = dt
        self.progress = 0.0
        self.laps = 0
        self.steps = 0
        self.last_lap_step = 0
        self.lap_times: list[float] = []

    def update(self, new_s: float) -> bool:
        self.steps += 1
        self.progress += progress_delta(self.s, new_s, self.track)
        self.s = new_s
        if self.progress >= (self.laps + 1) * self.length:
            self.laps += 1
            self.lap_times.append((self.steps - self.last_lap_step) * self.dt)
            self.last_lap_step = self.steps
            return True
        return False

    def stalled_for(self) -> float:
        """Simulated time since the last lap completion (or the start)."""
        return (self.steps - self.last_lap_step) * self.dt


@dataclass
class EpisodeMetrics:
    controller: str
    seed: int
    laps: int = 0
    collisions: int = 0
    boundary_collisions: int = 0
    obstacle_collisions: int = 0
    collisions_per_lap: float = math.nan
    lap_times: list = field(default_factory=list)
    mean_lap_time: float = math.nan
    collision_events: list = field(default_factory=list)
    iterations: int = 0
    trajectories_evaluated: int = 0
    aborted: bool = False
    abort_reason: str = ""
    wall_time: float = 0.0
    trajectory: np.ndarray | None = field(default=None, repr=False)

    def summary(self) -> dict:
        """Deterministic scalar fields (no wall time, no logs)."""
        return {
            "controller": self.controller,
            "seed": self.seed,
            "laps": self.laps,
            "collisions": self.collisions,
            "boundary_collisions": self.boundary_collisions,
            "obstacle_collisions": self.obstacle_collisions,
            "collisions_per_lap": self.collisions_per_lap,
            "mean_lap_time": self.mean_lap_time,
            "iterations": self.iterations,
            "trajectories_evaluated": self.trajectories_evaluated,
            "aborted": self.aborted,
        }


def make_controller(sc: Scenario, track: Track, threads: int | None = None) -> Controller:
    return Controller(track, sc.vehicle, sc.costs.weights(), sc.controller.params(),
                      kind=sc.controller.kind, risk=sc.risk, risk_model=sc.plant.model(),
                      seed=sc.run.seed, threads=threads, progress_unit=sc.costs.progress_unit)


def run_episode(sc: Scenario, threads: int | None = None, track: Track | None = None,
                max_laps: int | None = None) -> EpisodeMetrics:
    """Drive ``sc.run.laps`` laps on the disturbed plant under the scenario's controller.

    Deterministic in the scenario (including its seed) for any thread count.
    The episode stops early, flagged ``aborted``, when a lap takes longer
    than ``sc.run.stuck_timeout`` simulated seconds.
    """
    track = track or sc.track.build()
    laps_target = max_laps or sc.run.laps
    vehicle = sc.vehicle
    dt = vehicle.dt
    plant = sc.plant.model()
    seed = sc.run.seed
    x = State(*map(float, sc.run.initial_state))
    mean = np.zeros((sc.controller.K, 2))
    proj = project(x, track)
    laps = LapTracker(track, proj.s, dt)
    counter = CollisionCounter()
    rows = [(0.0, *x, proj.s, proj.e, track.half_width - abs(proj.e), 0)]
    metrics = EpisodeMetrics(sc.controller.kind, seed)
    started = time.perf_counter()
    with make_controller(sc, track, threads) as ctrl:
        it = 0
        while laps.laps < laps_target:
            v_plus, _ = ctrl.iterate(x, mean, it)
            w = sample_disturbance(plant, rngmod.stream(seed, rngmod.PLANT, it))
            x = step_disturbed(x, v_plus[0], w, vehicle)
            mean = shift_mean(v_plus)
            it += 1
            t = it * dt
            proj = project(x, track)
            d = track.half_width - abs(proj.e)
            kind = OBSTACLE if obstacle_count(x.x, x.y, track.obstacle_table) > 0 else (
                BOUNDARY if d < 0 else None)
            counter.update(kind, t, x.x, x.y)
            rows.append((t, *x, proj.s, proj.e, d, int(kind is not None)))
            if laps.update(proj.s):
                log.debug("lap %d in %.2f s", laps.laps, laps.lap_times[-1])
            if laps.stalled_for() > sc.run.stuck_timeout:
                metrics.aborted = True
                metrics.abort_reason = (f"no lap completed within {sc.run.stuck_timeout:g} s "
                                        f"at t={t:.2f}")
                log.warning("episode aborted: %s", metrics.abort_reason)
                break
        metrics.iterations = it
        metrics.trajectories_evaluated = it * ctrl.trajectories_per_iteration
    metrics.wall_time = time.perf_counter() - started
    metrics.laps = laps.laps
    metrics.lap_times = list(laps.lap_times)
    metrics.mean_lap_time = float(np.mean(laps.lap_times)) if laps.lap_times else math.nan
    metrics.collision_events = list(counter.events)
    metrics.collisions = len(counter.events)
    metrics.obstacle_collisions = sum(e[3] == OBSTACLE for e in counter.events)
    metrics.boundary_collisions = metrics.collisions - metrics.obstacle_collisions
    metrics.collisions_per_lap = metrics.collisions / laps.laps if laps.laps else math.nan
    metrics.trajectory = np.array(rows, dtype=float)
    return metrics


def _episode_job(args):
    sc, threads = args
    try:
        m = run_episode(sc, threads)
    except Exception as exc:  # noqa: BLE001 - reported per job by the caller
        log.exception("episode failed")
        return exc
    m.trajectory = None
    return m


def run_many(scenarios, workers: int = 1, threads: int | None = 1) -> list[EpisodeMetrics]:
    """Run independent episodes, one per worker process; results keep input order.

    A failed episode shows up as the exception instance in its slot.
    """
    jobs = [(sc, threads) for sc in scenarios]
    if workers <= 1 or len(jobs) <= 1:
        return [_episode_job(j) for j in jobs]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(_episode_job, jobs))


def seed_family(sc: Scenario, n: int) -> list[int]:
    return [sc.run.seed + i for i in range(n)]


def with_controller(sc: Scenario, kind: str, seed: int, **risk) -> Scenario:
    sc = dataclasses.replace(sc, controller=dataclasses.replace(sc.controller, kind=kind),
                             run=dataclasses.replace(sc.run, seed=seed))
    if risk:
        sc = dataclasses.replace(sc, risk=dataclasses.replace(sc.risk, **risk))
    return sc


@dataclass
class GridResult:
    alphas: list
    c_us: list
    seeds: list
    baseline: int  # total MPPI collisions over the seeds
    collisions: dict  # (alpha, C_u) -> total RA-MPPI collisions, None when the cell failed
    ratios: dict  # (alpha, C_u) -> ratio, None when undefined
    errors: dict = field(default_factory=dict)
    baseline_lap_time: float = math.nan
    lap_times: dict = field(default_factory=dict)

    def alpha_trend(self) -> float:
        """Fraction of (lower alpha, higher alpha) pairs, per C_u column, where the ratio drops.

        Ties count one half. NaN when no comparable pair exists.
        """
        wins = total = 0.0
        for cu in self.c_us:
            vals = [(a, self.ratios.get((a, cu))) for a in self.alphas]
            vals = [(a, r) for a, r in vals if r is not None]
            for i in range(len(vals)):
                for j in range(i + 1, len(vals)):
                    (a1, r1), (a2, r2) = sorted([vals[i], vals[j]])
                    total += 1
                    wins += 1.0 if r2 < r1 else 0.5 if r2 == r1 else 0.0
        return wins / total if total else math.nan


def grid_search(base: Scenario, c_us, alphas, seeds: int = 3, workers: int = 1,
                threads: int | None = 1) -> GridResult:
    """RA-MPPI collision totals over a (C_u, alpha) grid, each divided by the MPPI total.

    Every cell and the MPPI baseline run the same seed family, so all of them
    see identical plant noise.
    """
    if not c_us or not alphas:
        raise ValueError("grid axes must be nonempty")
    family = seed_family(base, seeds)
    base_runs = run_many([with_controller(base, MPPI, s) for s in family], workers, threads)
    failed = [r for r in base_runs if isinstance(r, Exception)]
    if failed:
        raise failed[0]
    baseline = sum(m.collisions for m in base_runs)
    cells = [(a, cu) for a in alphas for cu in c_us]
    jobs = [with_controller(base, RA_MPPI, s, alpha=a, C_u=cu) for a, cu in cells for s in family]
    collisions, ratios, errors, lap_times = {}, {}, {}, {}
    results = run_many(jobs, workers, threads)
    for i, cell in enumerate(cells):
        chunk = results[i * seeds:(i + 1) * seeds]
        bad = [r for r in chunk if isinstance(r, Exception) or r.aborted]
        if bad:
            first = bad[0]
            errors[cell] = str(first) if isinstance(first, Exception) else first.abort_reason
            collisions[cell] = None
            ratios[cell] = None
            continue
        total = sum(m.collisions for m in chunk)
        collisions[cell] = total
        ratios[cell] = total / baseline if baseline > 0 else None
        lap_times[cell] = float(np.mean([m.mean_lap_time for m in chunk]))
    return GridResult(list(alphas), list(c_us), family, baseline, collisions, ratios, errors,
                      float(np.mean([m.mean_lap_time for m in base_runs])), lap_times)


# GPU iteration rates for the same trajectory counts, reported next to CPU numbers
REFERENCE_GPU_HZ = {102_400: 81.6, 307_200: 44.3, 512_000: 27.8}


def throughput_benchmark(sc: Scenario, totals=(102_400, 307_200, 512_000), threads=(1,),
                         M: int = 1024, iterations: int = 3) -> list[dict]:
    """Time full RA-MPPI iterations for each total trajectory count M * (N + 1)."""
    track = sc.track.build()
    x0 = np.asarray(sc.run.initial_state, dtype=float)
    rows = []
    for n_threads in threads:
        for total in totals:
            if total % M:
                raise ValueError(f"total {total} is not a multiple of M={M}")
            N = total // M - 1
            run = dataclasses.replace(
                sc, controller=dataclasses.replace(sc.controller, kind=RA_MPPI, M=M),
                risk=dataclasses.replace(sc.risk, N=max(N, 1)))
            mean = np.zeros((run.controller.K, 2))
            with make_controller(run, track, n_threads) as ctrl:
                ctrl.iterate(x0, mean, 0)  # warm-up (JIT, pool start)
                t0 = time.perf_counter()
                for i in range(iterations):
                    ctrl.iterate(x0, mean, i + 1)
                elapsed = time.perf_counter() - t0
            hz = iterations / elapsed
            rows.append({
                "threads": n_threads,
                "M": M,
                "N": N,
                "total_trajectories": total,
                "iterations_per_s": hz,
                "trajectories_per_s": hz * total,
                "reference_gpu_hz": REFERENCE_GPU_HZ.get(total, math.nan),
            })
    return rows
