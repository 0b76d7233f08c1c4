"""Batched nominal and disturbed rollouts, compiled with numba.

Kernels release the GIL so the controller can fan candidate blocks out to a
thread pool. Each candidate is processed by exactly one kernel call with a
fixed loop order, so results are bit-identical for any block split.
"""
from __future__ import annotations

import math

import numba
import numpy as np

from .dynamics import bicycle_step, wrap_angle
from .track import progress_delta_scalar, project_xy, state_cost_xy, terminal_cost_scalar


@numba.njit(cache=True, nogil=True)
def nominal_costs(x0, u, v, sig_inv, gamma, table, total_length, obstacles, half_width,
                  c, progress_scale, wheelbase, dt, out, traj):
    """Trajectory cost of every control sequence in ``u`` (shape M, K, 2).

    ``out[m]`` receives the running cost of states 0..K-1, the control term
    ``gamma * v_k' inv(Sigma) u_k`` and the terminal cost on the horizon
    progress. ``traj`` (M, K+1, 4) receives the states when it has a nonzero
    first dimension.
    """
    M = u.shape[0]
    K = u.shape[1]
    keep = traj.shape[0] > 0
    for m in range(M):
        x = x0[0]
        y = x0[1]
        psi = x0[2]
        vel = x0[3]
        total = 0.0
        progress = 0.0
        q, s_prev = state_cost_xy(x, y, table, total_length, obstacles, half_width, c[0], c[1], c[2])
        if keep:
            traj[m, 0, 0] = x
            traj[m, 0, 1] = y
            traj[m, 0, 2] = psi
            traj[m, 0, 3] = vel
        for k in range(K):
            a = u[m, k, 0]
            d = u[m, k, 1]
            total += q + gamma * (v[k, 0] * sig_inv[0] * a + v[k, 1] * sig_inv[1] * d)
            x, y, psi, vel = bicycle_step(x, y, psi, vel, a, d, wheelbase, dt)
            if keep:
                traj[m, k + 1, 0] = x
                traj[m, k + 1, 1] = y
                traj[m, k + 1, 2] = psi
                traj[m, k + 1, 3] = vel
            if k + 1 < K:
                q, s_new = state_cost_xy(x, y, table, total_length, obstacles, half_width,
                                         c[0], c[1], c[2])
            else:
                s_new, _, _ = project_xy(x, y, table, total_length)
            progress += progress_delta_scalar(s_prev, s_new, total_length)
            s_prev = s_new
        out[m] = total + terminal_cost_scalar(progress * progress_scale, c[3], c[4])


@numba.njit(cache=True, nogil=True)
def risk_costs(x0, u, w, table, total_length, obstacles, half_width, c, wheelbase, dt, out):
    """Risk cost sum_{k<K} q(x~_k) of every disturbed rollout.

    ``u`` is (B, K, 2), ``w`` is (B, N, K, 4), ``out`` is (B, N).
    """
    B = u.shape[0]
    N = w.shape[1]
    K = u.shape[1]
    yaw_gain = np.empty(K)
    for b in range(B):
        for k in range(K):
            yaw_gain[k] = math.tan(u[b, k, 1]) * dt / wheelbase
        for n in range(N):
            x = x0[0]
            y = x0[1]
            psi = x0[2]
            vel = x0[3]
            total = 0.0
            for k in range(K):
                q, _ = state_cost_xy(x, y, table, total_length, obstacles, half_width,
                                     c[0], c[1], c[2])
                total += q
                # same update as bicycle_step with tan(steer) hoisted out of the n loop
                nx = x + vel * math.cos(psi) * dt + w[b, n, k, 0]
                y = y + vel * math.sin(psi) * dt + w[b, n, k, 1]
                x = nx
                psi = wrap_angle(wrap_angle(psi + vel * yaw_gain[k]) + w[b, n, k, 2])
                vel = vel + u[b, k, 0] * dt + w[b, n, k, 3]
            out[b, n] = total
