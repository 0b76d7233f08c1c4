"""Acceptance criteria 1-12.

Each test records a PASS / FAIL / N/A line that the terminal summary prints
after the run. Closed-loop criteria are marked ``slow``; deselect them with
``-m "not slow"``.
"""
import csv
import math
import os
from fractions import Fraction
from statistics import NormalDist

import numpy as np
import pytest

from riskpath import rng as rngmod
from riskpath.cli import main
from riskpath.config import Scenario
from riskpath.dynamics import KINDS, sample_disturbance, step_disturbed, step_nominal
from riskpath.mppi import compute_weights, weighted_update
from riskpath.risk import cvar_empirical, scale_costs
from riskpath.simulator import grid_search, run_episode, run_many, with_controller

SEEDS = range(5)


def record(criteria, n, ok, detail):
    criteria[n] = ("PASS" if ok else "FAIL", detail)


def _compare(runs):
    """Collision ratio and lap-time ratio of RA-MPPI over MPPI; None when undefined.

    A ratio only counts when both controllers finished every lap on every
    seed; a controller that stops short avoids collisions by not driving.
    """
    mppi, ra = runs["mppi"], runs["ra-mppi"]
    complete = not any(m.aborted for m in mppi + ra)
    n_m = sum(m.collisions for m in mppi)
    n_r = sum(m.collisions for m in ra)
    ratio = n_r / n_m if complete and n_m > 0 else None
    lt_m = float(np.mean([m.mean_lap_time for m in mppi]))
    lt_r = float(np.mean([m.mean_lap_time for m in ra]))
    lap_ratio = lt_r / lt_m if complete else None
    laps = f"laps mppi {sum(m.laps for m in mppi)}, ra-mppi {sum(m.laps for m in ra)}"
    aborted = [f"{m.controller}/seed {m.seed}" for m in mppi + ra if m.aborted]
    note = f"{laps}; aborted: {', '.join(aborted)}" if aborted else laps
    return ratio, lap_ratio, n_m, n_r, lt_m, lt_r, note


@pytest.fixture(scope="session")
def paired_runs():
    """Both controllers, 20 laps x 5 seeds, per plant noise variant."""
    out = {}
    for kind in KINDS:
        base = Scenario().with_overrides([f"plant={kind}"])
        out[kind] = {ctrl: run_many([with_controller(base, ctrl, s) for s in SEEDS])
                     for ctrl in ("mppi", "ra-mppi")}
    return out


def _fmt(x):
    return "undefined" if x is None else f"{x:.3f}"


@pytest.mark.slow
def test_c01_collision_ratio(paired_runs, criteria):
    ratio, _, n_m, n_r, _, _, note = _compare(paired_runs["gaussian"])
    ok = ratio is not None and ratio <= 0.6
    record(criteria, 1, ok, f"gaussian ratio {_fmt(ratio)} (ra {n_r} / mppi {n_m}, limit 0.6); {note}")
    assert ok


@pytest.mark.slow
def test_c02_noise_sweep(paired_runs, criteria):
    parts, ok = [], True
    for kind in KINDS:
        ratio, _, n_m, n_r, *_ = _compare(paired_runs[kind])
        good = ratio is not None and ratio <= 0.7
        ok &= good
        parts.append(f"{kind} {_fmt(ratio)} ({n_r}/{n_m})")
    record(criteria, 2, ok, "ratios " + ", ".join(parts) + " (limit 0.7 each)")
    assert ok


@pytest.mark.slow
def test_c03_lap_time_parity(paired_runs, criteria):
    _, lap_ratio, _, _, lt_m, lt_r, note = _compare(paired_runs["gaussian"])
    ok = lap_ratio is not None and lap_ratio <= 1.15
    record(criteria, 3, ok, f"lap time ratio {_fmt(lap_ratio)} (ra {lt_r:.2f} s / mppi "
                            f"{lt_m:.2f} s, limit 1.15); {note}")
    assert ok


def test_c04_gaussian_cvar(criteria):
    nd = NormalDist()
    x = rngmod.stream(4, rngmod.TEST).standard_normal(100_000)
    errs = {a: abs(cvar_empirical(x, a).cvar - nd.pdf(nd.inv_cdf(a)) / (1 - a))
            for a in (0.5, 0.7, 0.9)}
    ok = max(errs.values()) <= 0.03
    record(criteria, 4, ok, "max |error| " + ", ".join(f"a={a}: {e:.4f}" for a, e in errs.items()))
    assert ok


def _oracle(values, alpha):
    vals = [Fraction(v) for v in values]
    n, a = len(vals), Fraction(alpha)
    var = min(t for t in vals if Fraction(sum(v <= t for v in vals), n) >= a)
    tail = [v for v in vals if v >= var]
    return float(var), float(sum(tail) / len(tail)), len(tail)


def test_c05_cvar_oracle(criteria):
    g = rngmod.stream(5, rngmod.TEST)
    mismatches = 0
    for i in range(1000):
        n = int(g.integers(1, 13))
        # every other set draws from a small pool so ties are common
        vals = g.integers(0, 5, n).astype(float) if i % 2 else g.normal(0, 10, n)
        alpha = float(g.uniform(0.01, 0.99))
        r = cvar_empirical(vals, alpha)
        if (r.var, r.cvar, r.n_tail) != _oracle(vals, alpha):
            mismatches += 1
    record(criteria, 5, mismatches == 0, f"{mismatches} mismatches over 1000 sets")
    assert mismatches == 0


def test_c06_weight_invariants(criteria):
    g = rngmod.stream(6, rngmod.TEST)
    fails = {"shift": 0, "max": 0, "argmin": 0}
    for _ in range(10_000):
        m = int(g.integers(1, 65))
        lam = float(g.uniform(0.05, 5.0))
        # costs and shift on a 2^-20 grid: the shifted costs are exact, so
        # bit equality tests the weighting rather than float addition
        costs = g.integers(0, 2**26, m) * 2.0**-20
        c = int(g.integers(-2**20, 2**20)) * 2.0**-20
        w, _ = compute_weights(costs, lam)
        w2, _ = compute_weights(costs + c, lam)
        fails["shift"] += not np.array_equal(w, w2)
        fails["max"] += bool(w.max() != 1.0)
        sep = g.permutation(m) * 1e-3 + float(g.uniform(0, 10))
        u = g.normal(size=(m, 3, 2))
        v = weighted_update(u, compute_weights(sep, 1e-6)[0])
        fails["argmin"] += not np.array_equal(v, u[np.argmin(sep)])
    ok = not any(fails.values())
    record(criteria, 6, ok, "failures over 1e4 batches: " + str(fails))
    assert ok


def test_c07_scaling_transform(criteria):
    g = rngmod.stream(7, rngmod.TEST)
    worst_ulps = worst_rel = 0.0
    for i in range(10_000):
        B = (0.0, 0.5, 1.0, 2.0, 10.0)[i % 5]
        n = int(g.integers(2, 65))
        L = g.uniform(0, 100, n) * float(g.choice([1e-3, 1.0, 1e3]))
        S = scale_costs(L, B)
        m0 = math.fsum(L) / n
        worst_ulps = max(worst_ulps, abs(math.fsum(S) / n - m0) / np.spacing(m0))
        s0, s1 = L.std(), S.std()
        # B = 0 has no relative scale; measure against the input spread instead
        worst_rel = max(worst_rel, abs(s1 - B * s0) / (B * s0 if B > 0 else s0))
    ok = worst_ulps <= 8 and worst_rel <= 1e-12
    record(criteria, 7, ok, f"mean drift {worst_ulps:.0f} ulps (limit 8), std rel error "
                            f"{worst_rel:.2e} (limit 1e-12)")
    assert ok


def test_c08_unbiased_disturbance(criteria):
    veh = Scenario().vehicle
    s, u = (0.3, -0.2, 0.4, 1.1), (0.5, 0.1)
    nominal = np.array(step_nominal(s, u, veh))
    worst, ok = 0.0, True
    for kind in KINDS:
        model = Scenario().with_overrides([f"plant={kind}"]).plant.model()
        w = sample_disturbance(model, rngmod.stream(8, rngmod.TEST, KINDS.index(kind)), 100_000)
        nxt = np.array([step_disturbed(s, u, wi, veh) for wi in w])
        dev = nxt.mean(axis=0) - nominal
        se = nxt.std(axis=0, ddof=1) / math.sqrt(len(nxt))
        for j, (d, e) in enumerate(zip(dev, se)):
            if not w[:, j].any():
                # channel outside the mask: only rounding in the mean remains
                ok &= abs(d) < 1e-12
            else:
                worst = max(worst, abs(d) / e)
    ok &= worst <= 4
    record(criteria, 8, ok, f"largest deviation {worst:.2f} standard errors (limit 4)")
    assert ok


@pytest.mark.slow
def test_c09_determinism(tmp_path, criteria):
    args = ["--set", "controller=ra-mppi", "--set", "laps=1", "--set", "controller.M=64",
            "--set", "risk.N=8", "--seed", "3"]
    counts = sorted({1, 4, os.cpu_count() or 1})
    blobs = []
    for t in counts:
        out = tmp_path / f"t{t}"
        main(["run", "--out", str(out), "--threads", str(t), *args])
        blobs.append((out / "metrics.csv").read_bytes())
    ok = all(b == blobs[0] for b in blobs)
    record(criteria, 9, ok, f"metrics.csv identical at threads {counts}: {ok}")
    assert ok


@pytest.mark.slow
def test_c10_inert_filter(criteria):
    sc = Scenario().with_overrides(["laps=2", "seed=1"])
    ref = run_episode(with_controller(sc, "mppi", 1))
    ra = run_episode(with_controller(sc, "ra-mppi", 1, A=0.0))
    ok = ref.trajectory.shape == ra.trajectory.shape and np.array_equal(ref.trajectory, ra.trajectory)
    record(criteria, 10, ok, f"A=0 trajectory identical to MPPI over {ref.iterations} steps: {ok}")
    assert ok


@pytest.mark.slow
def test_c11_throughput(tmp_path, criteria):
    cores = os.cpu_count() or 1
    assert main(["bench", "--out", str(tmp_path), "--thread-counts", "1,max",
                 "--iterations", "2"]) == 0
    with open(tmp_path / "bench.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    per_threads = {}
    for r in rows:
        per_threads.setdefault(int(r["threads"]), {})[int(r["total_trajectories"])] = \
            float(r["trajectories_per_s"])
    assert all(sorted(v) == [102_400, 307_200, 512_000] for v in per_threads.values())
    rates = ", ".join(f"{t} thr: {v[102_400]:.3g} traj/s" for t, v in sorted(per_threads.items()))
    if cores < 4:
        criteria[11] = ("N/A", f"{cores}-core host, speedup not required; bench.csv written ({rates})")
        return
    speedup = per_threads[cores][102_400] / per_threads[1][102_400]
    ok = speedup >= 2.0
    record(criteria, 11, ok, f"speedup {speedup:.2f} at {cores} threads (limit 2); {rates}")
    assert ok


@pytest.mark.slow
def test_c12_grid(criteria):
    result = grid_search(Scenario(), [0.5, 0.6, 0.7], [0.5, 0.7, 0.9], seeds=3)
    ratios = [result.ratios[(a, c)] for a in result.alphas for c in result.c_us]
    good = [r for r in ratios if r is not None and math.isfinite(r) and r >= 0]
    ok = len(good) == 9
    trend = result.alpha_trend()
    failed = sorted({e for e in result.errors.values()})
    detail = (f"{len(good)}/9 cells with a finite ratio; alpha trend {trend:.2f} "
              f"(fraction of alpha increases that lower the ratio, not gated)")
    if failed:
        detail += f"; cell failures: {failed[0]}" + (f" (+{len(failed) - 1} more)" if len(failed) > 1 else "")
    record(criteria, 12, ok, detail)
    assert ok
