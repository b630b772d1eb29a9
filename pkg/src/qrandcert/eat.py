"""Entropy-accumulation trial-count baseline with CHSH-based min-tradeoff
functions.

Given an expected CHSH winning probability p = I_hat/8 + 1/2, the
single-trial von Neumann entropy bound is

    g(p) = 1 - h(1/2 + 1/2 sqrt(16 p (p-1) + 3)),   p in [3/4, (2+sqrt2)/4]
         = 1                                        above,

with h the binary entropy.  A min-tradeoff function f_min(p_t, .) equals g
below the cut point p_t and continues along the tangent above it; the
second-order penalty term v grows with the tangent slope.  The required
trial count solves a quadratic in sqrt(n), minimized over the cut point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["EatInputs", "EatRateZero", "g_rate", "g_rate_slope", "min_tradeoff", "n_eat"]

_P_UPPER = (2.0 + math.sqrt(2.0)) / 4.0


class EatRateZero(ValueError):
    """No CHSH violation: the accumulation rate is zero, no finite count."""


@dataclass(frozen=True)
class EatInputs:
    I_hat: float          # expected CHSH value, 2 < I_hat <= 2*sqrt(2)
    sigma: float          # entropy to certify (bits)
    eps_sigma: float
    kappa: float = 1.0    # success-probability lower bound; 1 reproduces the
                          # formal convention used for comparisons

    def __post_init__(self):
        if not 2.0 < self.I_hat <= 2.0 * math.sqrt(2.0) + 1e-12:
            raise ValueError(f"I_hat={self.I_hat} outside (2, 2*sqrt(2)]")
        if not 0.0 < self.kappa <= 1.0:
            raise ValueError("kappa must be in (0, 1]")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not 0.0 < self.eps_sigma < 1.0:
            raise ValueError("eps_sigma must be in (0, 1)")


def _binary_entropy(x: float) -> float:
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def g_rate(p: float) -> float:
    """Single-trial entropy rate at winning probability p, on [3/4, 1]."""
    if not 0.75 - 1e-12 <= p <= 1.0 + 1e-12:
        raise ValueError(f"p={p} outside [3/4, 1]")
    if p >= _P_UPPER:
        return 1.0
    u = 16.0 * p * (p - 1.0) + 3.0
    return 1.0 - _binary_entropy(0.5 + 0.5 * math.sqrt(max(u, 0.0)))


def g_rate_slope(p: float) -> float:
    """Analytic derivative of g_rate on [3/4, (2+sqrt2)/4].

    The closed form 4(2p-1)/sqrt(u) * log2(arg/(1-arg)) has a removable
    0/0 at u -> 0 (p = 3/4) with limit 8(2p-1)/ln 2, and diverges to +inf
    at the upper endpoint (arg -> 1), which rules that cut point out of
    the trial-count minimization.
    """
    if p >= _P_UPPER:
        return math.inf
    u = 16.0 * p * (p - 1.0) + 3.0
    su = math.sqrt(max(u, 0.0))
    if su < 1e-7:
        return 8.0 * (2.0 * p - 1.0) / math.log(2.0)
    arg = 0.5 + 0.5 * su
    if arg >= 1.0:
        return math.inf
    return 4.0 * (2.0 * p - 1.0) / su * math.log2(arg / (1.0 - arg))


def min_tradeoff(p_t: float, p: float) -> float:
    """g below the cut point, tangent-line extension above it."""
    if p <= p_t:
        return g_rate(p)
    return g_rate(p_t) + g_rate_slope(p_t) * (p - p_t)


def _n_at(p_t: float, p_hat: float, sigma: float, eps_sigma: float, kappa: float) -> float:
    fmin = min_tradeoff(p_t, p_hat)
    if fmin <= 0.0:
        return math.inf
    v = 2.0 * (math.log2(9.0) + g_rate_slope(p_t)) * math.sqrt(
        1.0 - 2.0 * math.log2(eps_sigma * kappa)
    )
    root = (v + math.sqrt(v * v + 4.0 * sigma * fmin)) / (2.0 * fmin)
    return root * root


def n_eat(inputs: EatInputs, grid_points: int = 10001) -> tuple[int, float]:
    """Minimum i.i.d. trial count and the minimizing cut point p_t.

    Dense grid over the cut-point interval plus golden-section refinement
    of the bracketing cell.
    """
    p_hat = inputs.I_hat / 8.0 + 0.5
    if p_hat <= 0.75:
        raise EatRateZero("no CHSH violation: accumulation rate is zero")
    grid = np.linspace(0.75, _P_UPPER, grid_points)
    vals = [_n_at(pt, p_hat, inputs.sigma, inputs.eps_sigma, inputs.kappa) for pt in grid]
    i = int(np.argmin(vals))
    a = grid[max(0, i - 1)]
    b = grid[min(grid_points - 1, i + 1)]
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    x1, x2 = b - phi * (b - a), a + phi * (b - a)
    f1 = _n_at(x1, p_hat, inputs.sigma, inputs.eps_sigma, inputs.kappa)
    f2 = _n_at(x2, p_hat, inputs.sigma, inputs.eps_sigma, inputs.kappa)
    while b - a > 1e-12:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - phi * (b - a)
            f1 = _n_at(x1, p_hat, inputs.sigma, inputs.eps_sigma, inputs.kappa)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (b - a)
            f2 = _n_at(x2, p_hat, inputs.sigma, inputs.eps_sigma, inputs.kappa)
    candidates = [(vals[i], grid[i]), (f1, x1), (f2, x2)]
    best_val, best_pt = min(candidates)
    return math.ceil(best_val), float(best_pt)
