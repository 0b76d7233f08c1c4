import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from riskpath import rng as rngmod
from riskpath.dynamics import VehicleParams
from riskpath.mppi import (Controller, DegenerateBatch, MppiParams, compute_weights, rollout_nominal,
                           sample_control_batch, shift_mean, weighted_update)
from riskpath.risk import RiskParams
from riskpath.dynamics import DisturbanceModel
from riskpath.track import CostWeights, stadium

VEH = VehicleParams()


def test_warm_zero_split():
    p = MppiParams(M=1024, eta=0.2)
    assert (p.n_warm, p.n_zero_mean) == (819, 205)


def test_warm_samples_follow_mean():
    p = MppiParams(K=5, M=40, eta=0.25, sigma_eps=(1e-20, 1e-20))
    mean = np.tile([0.5, 0.1], (5, 1))
    u, eps = sample_control_batch(mean, p, np.random.default_rng(0))
    np.testing.assert_allclose(u[:30], np.broadcast_to(mean, (30, 5, 2)), atol=1e-9)
    np.testing.assert_allclose(u[30:], 0.0, atol=1e-9)


def test_eta_one_all_zero_mean():
    p = MppiParams(K=4, M=16, eta=1.0)
    mean = np.ones((4, 2))
    u, eps = sample_control_batch(mean, p, np.random.default_rng(1))
    np.testing.assert_array_equal(u, eps)


def test_samples_clamped():
    p = MppiParams(K=4, M=500, sigma_eps=(100.0, 100.0))
    u, eps = sample_control_batch(np.zeros((4, 2)), p, np.random.default_rng(2), VEH)
    assert u[..., 0].min() >= -3 and u[..., 0].max() <= 3
    assert u[..., 1].min() >= -0.45 and u[..., 1].max() <= 0.45
    assert np.abs(eps).max() > 3


def test_noise_statistics():
    p = MppiParams(K=10, M=20_000, sigma_eps=(1.0, 0.04))
    _, eps = sample_control_batch(np.zeros((10, 2)), p, np.random.default_rng(3))
    np.testing.assert_allclose(eps.reshape(-1, 2).var(axis=0), [1.0, 0.04], rtol=0.02)


def test_correlated_noise_keeps_marginal():
    p = MppiParams(K=10, M=20_000, rho=0.8)
    _, eps = sample_control_batch(np.zeros((10, 2)), p, np.random.default_rng(4))
    np.testing.assert_allclose(eps[:, -1].var(axis=0), [1.0, 0.04], rtol=0.03)
    c = np.corrcoef(eps[:, 4, 0], eps[:, 5, 0])[0, 1]
    assert c == pytest.approx(0.8, abs=0.02)


def test_mean_shape_checked():
    with pytest.raises(ValueError):
        sample_control_batch(np.zeros((3, 2)), MppiParams(K=4), np.random.default_rng(0))


@pytest.mark.parametrize("kw", [dict(K=0), dict(M=0), dict(lam=0), dict(gamma=1.0),
                                dict(eta=1.5), dict(sigma_eps=(1.0, 0.0)), dict(rho=1.0)])
def test_params_invariants(kw):
    with pytest.raises(ValueError):
        MppiParams(**kw)


def test_rollout_k1_control_term():
    zero = CostWeights(0, 0, 0, 0, 0)
    p = MppiParams(K=1, lam=1.0, gamma=1.0, sigma_eps=(1.0, 1.0))
    r = rollout_nominal(np.zeros(4), [[2.0, 0.0]], stadium(), zero, p, VEH, mean=[[1.0, 0.0]])
    assert r.cost == pytest.approx(2.0)
    assert r.trajectory.shape == (2, 4)


def test_rollout_control_term_matches_quadratic_form():
    zero = CostWeights(0, 0, 0, 0, 0)
    p = MppiParams(K=6, lam=1.0, gamma=0.5, sigma_eps=(2.0, 0.5))
    v = np.random.default_rng(5).uniform(-0.4, 0.4, (6, 2))
    r = rollout_nominal(np.zeros(4), v, stadium(), zero, p, VEH, mean=v)
    expected = 0.5 * np.sum(v * v / np.array([2.0, 0.5]))
    assert r.cost == pytest.approx(expected, rel=1e-12)


def test_parked_vehicle_costs_terminal_plus_centerline_boundary():
    # on the centerline the boundary penalty is small but not zero
    w = CostWeights()
    p = MppiParams(K=30)
    track = stadium()
    x0 = np.array([1.0, 0.0, 0.0, 0.0])
    r = rollout_nominal(x0, np.zeros((30, 2)), track, w, p, VEH)
    mu = math.atan(-100 * 0.3) / math.pi + 0.5
    assert r.cost == pytest.approx(w.c4 + 30 * w.c1 * mu, rel=1e-9)
    np.testing.assert_array_equal(r.trajectory[0], x0)


def test_weight_examples():
    w, bad = compute_weights([3.0, 3.0, 3.0], 0.35)
    np.testing.assert_array_equal(w, 1.0)
    w, _ = compute_weights([2.0, 2.35], 0.35)
    np.testing.assert_allclose(w, [1.0, math.exp(-1)], rtol=1e-12)
    assert bad == 0


def test_non_finite_costs_rejected():
    w, bad = compute_weights([1.0, np.nan, np.inf, 2.0], 1.0)
    assert bad == 2 and w[1] == w[2] == 0 and w[0] == 1


def test_update_examples():
    u0 = np.full((3, 2), 7.0)
    np.testing.assert_array_equal(weighted_update(u0[None], [0.3]), u0)
    a, b = np.zeros((3, 2)), np.full((3, 2), 4.0)
    np.testing.assert_allclose(weighted_update(np.stack([a, b]), [1, 1]), 2.0)
    np.testing.assert_allclose(weighted_update(np.stack([a, b]), [3, 1]), 1.0)


def test_degenerate_batch():
    with pytest.raises(DegenerateBatch):
        weighted_update(np.zeros((2, 3, 2)), [0.0, 0.0])


def test_shift_mean_examples():
    np.testing.assert_array_equal(shift_mean([[1, 1], [2, 2], [3, 3]]), [[2, 2], [3, 3], [3, 3]])
    np.testing.assert_array_equal(shift_mean(np.full((4, 2), 0.5)), np.full((4, 2), 0.5))
    np.testing.assert_array_equal(shift_mean(np.zeros((4, 2))), 0.0)


costs = st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40)


@given(costs, st.floats(-1e3, 1e3), st.floats(0.01, 10))
def test_weights_in_unit_interval(c, shift, lam):
    w, _ = compute_weights(c, lam)
    assert w.max() == 1.0 and np.all((w >= 0) & (w <= 1))


@given(st.lists(st.floats(0, 50), min_size=2, max_size=30), st.floats(0.05, 5))
def test_update_is_convex_combination(c, lam):
    rng = np.random.default_rng(len(c))
    u = rng.normal(size=(len(c), 4, 2))
    v = weighted_update(u, compute_weights(c, lam)[0])
    assert np.all(v >= u.min(axis=0) - 1e-12) and np.all(v <= u.max(axis=0) + 1e-12)


def test_small_lambda_selects_argmin():
    rng = np.random.default_rng(6)
    c = rng.permutation(np.arange(20.0))
    u = rng.normal(size=(20, 5, 2))
    v = weighted_update(u, compute_weights(c, 1e-6)[0])
    np.testing.assert_array_equal(v, u[np.argmin(c)])


def _controller(kind, threads, **kw):
    track = stadium()
    risk = RiskParams(N=8) if kind == "ra-mppi" else None
    model = DisturbanceModel("gaussian", covariance=(1e-4, 1e-4, 1e-5, 1e-5))
    return Controller(track, VEH, CostWeights(), MppiParams(M=64), kind, risk, model,
                      seed=3, threads=threads, progress_unit="m", block=8, **kw)


@pytest.mark.parametrize("kind", ["mppi", "ra-mppi"])
def test_iteration_identical_across_threads(kind):
    x0 = np.array([0.5, 0.02, 0.0, 0.8])
    mean = np.tile([0.5, 0.0], (30, 1))
    outs = []
    for t in (1, 2, 4):
        with _controller(kind, t) as ctl:
            outs.append(ctl.iterate(x0, mean, 11)[0])
    for o in outs[1:]:
        np.testing.assert_array_equal(o, outs[0])


def test_trajectory_count():
    with _controller("ra-mppi", 1) as ctl:
        assert ctl.trajectories_per_iteration == 64 * 9


def test_streams_independent_of_creation_order():
    a = rngmod.stream(9, rngmod.RISK, 4, 2).standard_normal(5)
    rngmod.stream(9, rngmod.RISK, 4, 1).standard_normal(100)
    b = rngmod.stream(9, rngmod.RISK, 4, 2).standard_normal(5)
    np.testing.assert_array_equal(a, b)
