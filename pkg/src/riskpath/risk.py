"""Monte-Carlo CVaR of disturbed rollouts and the soft trajectory filter."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

THRESHOLD = "threshold"  # tail = every sample at or above VaR
TOP_K = "top-k"  # tail = the ceil((1 - alpha) N) largest samples


@dataclass(frozen=True)
class RiskParams:
    N: int = 64
    alpha: float = 0.7
    C_u: float = 0.6
    A: float = 10.0
    B: float = 1.0
    tail_rule: str = THRESHOLD
    # share one set of N disturbance sequences across all candidates of an iteration
    common_noise: bool = False

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.A < 0 or self.B < 0:
            raise ValueError("A and B must be nonnegative")
        if self.tail_rule not in (THRESHOLD, TOP_K):
            raise ValueError(f"unknown tail rule {self.tail_rule!r}")


class RiskReport(NamedTuple):
    var: float
    cvar: float
    violation_cost: float
    n_tail: int


def _var_index(n: int, alpha: float) -> int:
    # smallest rank r with r / n >= alpha, evaluated exactly as written;
    # ceil(alpha * n) alone misranks cases like 0.7 * 10 = 7.000000000000001
    r = min(max(math.ceil(alpha * n), 1), n)
    while r > 1 and (r - 1) / n >= alpha:
        r -= 1
    while r < n and r / n < alpha:
        r += 1
    return r - 1


def _exact_mean(a: np.ndarray) -> np.ndarray:
    # correctly rounded row sums; keeps the mean-preservation error at a few ulps
    rows = a.reshape(-1, a.shape[-1])
    sums = np.array([math.fsum(r) for r in rows])
    return (sums / a.shape[-1]).reshape(a.shape[:-1] + (1,))


def scale_costs(costs, B: float) -> np.ndarray:
    """Stretch deviations from the mean by ``B`` while keeping the mean.

    Works along the last axis. One refinement pass removes the drift in the
    mean left by rounding the stretched values.
    """
    costs = np.asarray(costs, dtype=float)
    mean = _exact_mean(costs)
    out = B * (costs - mean) + mean
    return out - (_exact_mean(out) - mean)


def var_empirical(costs, alpha: float) -> float:
    srt = np.sort(np.asarray(costs, dtype=float))
    return float(srt[_var_index(srt.size, alpha)])


def _rounded_mean(values: list[float]) -> float:
    """Mean of ``values`` rounded once: exact integer sum, then one true division."""
    parts = [v.as_integer_ratio() for v in values]
    den = max(d for _, d in parts)  # every denominator is a power of two
    total = sum(n * (den // d) for n, d in parts)
    return total / (den * len(parts))


def cvar_empirical(costs, alpha: float, tail_rule: str = THRESHOLD) -> RiskReport:
    """Empirical VaR and CVaR of one sample set.

    ``violation_cost`` is left at zero; see :func:`violation_cost`.
    """
    srt = np.sort(np.asarray(costs, dtype=float))
    n = srt.size
    if n == 0:
        raise ValueError("empty sample set")
    var = float(srt[_var_index(n, alpha)])
    if tail_rule == THRESHOLD:
        start = int(np.searchsorted(srt, var, side="left"))
    else:
        start = n - max(1, math.ceil((1.0 - alpha) * n - 1e-9))
    tail = srt[start:]
    return RiskReport(var, _rounded_mean(tail.tolist()), 0.0, int(tail.size))


def violation_cost(cvar: float, p: RiskParams) -> float:
    return p.A * cvar if cvar > p.C_u else 0.0


def evaluate(costs, p: RiskParams) -> list[RiskReport]:
    """Scale each row of ``costs`` (M, N) and return one report per row."""
    scaled = scale_costs(costs, p.B)
    out = []
    for row in scaled:
        r = cvar_empirical(row, p.alpha, p.tail_rule)
        out.append(r._replace(violation_cost=violation_cost(r.cvar, p)))
    return out


def filter_costs(S, reports) -> np.ndarray:
    """Add each candidate's violation cost to its trajectory cost."""
    S = np.asarray(S, dtype=float)
    if len(reports) != S.shape[0]:
        raise ValueError("one report per candidate is required")
    return S + np.array([r.violation_cost for r in reports])
