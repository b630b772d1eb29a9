"""Per-trial probability-estimation factors: validation against the
constrained trial model, optimization for a target behaviour, and the
planning quantities derived from them (expected trials, trial budget,
failure bound).

A factor table F(cz) with power beta is valid when

    sum_cz  nu_k(z) * q(c|z)^(1+beta) * F(cz)  <=  1

for every behaviour q in the device polytope and every input distribution
nu_k allowed by the bias model.  The left side is linear in nu_k and
convex in q (power 1+beta > 1), so checking the finitely many vertices of
both polytopes is sufficient.

Dividing a valid factor table by the certified scaling constant ``f_max``
gives the per-trial estimation factor used against quantum side
information; it enters all accounting as a constant log2 penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .bell_model import BiasPolytope, ConditionalDistribution, InputDistribution, VertexList

__all__ = [
    "DEFAULT_F_MAX",
    "PefTable",
    "PlanningReport",
    "NoCertifiableRandomness",
    "validate_pef",
    "optimize_pef",
    "optimize_beta",
    "expected_trials",
    "failure_probability",
    "qef_log2",
    "qef_log2_table",
]

# Certified upper end of the scaling-constant interval [1, 1 + 4e-8] for
# this trial model; applied as a per-trial log2 penalty.
DEFAULT_F_MAX = 1.0 + 4e-8

_ENTRY_FLOOR = 1e-12  # keeps log2 F finite; optimal tables are interior anyway


class NoCertifiableRandomness(RuntimeError):
    """The target behaviour admits no positive-rate estimation factor."""


@dataclass(frozen=True)
class PefTable:
    """Factor table F as a (4, 4) array [z, c], with power and scaling."""

    f: np.ndarray
    beta: float
    f_max: float = DEFAULT_F_MAX

    def __post_init__(self):
        arr = np.asarray(self.f, dtype=float).reshape(4, 4).copy()
        if np.any(arr < 0):
            raise ValueError("factor entries must be non-negative")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.f_max >= 1.0:
            raise ValueError("f_max must be >= 1")
        arr.flags.writeable = False
        object.__setattr__(self, "f", arr)

    def flat(self) -> np.ndarray:
        return self.f.reshape(-1)


@dataclass(frozen=True)
class PlanningReport:
    """Per-trial yield and the trial budget derived from it."""

    expected_log2_per_trial: float  # E_nu[log2 F] - log2 f_max
    n_exp: float
    n_budget: int
    p_fail_bound: float
    entropy_rate: float  # bits/trial, expected_log2_per_trial / beta


def _constraint_rows(beta: float, vertices: VertexList, bias: BiasPolytope) -> np.ndarray:
    """One row per (polytope vertex, bias vertex): coefficients of F in the
    validity constraint, flattened z-major."""
    Vq = np.clip(vertices.as_array(), 0.0, None)      # (nv, 4, 4) [z, c]
    B = bias.as_array()                               # (4, 4)  [k, z]
    rows = B[None, :, :, None] * Vq[:, None, :, :] ** (1.0 + beta)
    return rows.reshape(-1, 16)


def validate_pef(pef: PefTable, vertices: VertexList, bias: BiasPolytope) -> float:
    """Worst-case constraint value over all vertex pairs; valid iff <= 1."""
    rows = _constraint_rows(pef.beta, vertices, bias)
    return float(np.max(rows @ pef.flat()))


def _joint_weights(nu: ConditionalDistribution, input_dist: InputDistribution) -> np.ndarray:
    return (input_dist.probs[:, None] * nu.probs).reshape(-1)


def optimize_pef(
    nu: ConditionalDistribution,
    input_dist: InputDistribution,
    beta: float,
    vertices: VertexList,
    bias: BiasPolytope,
) -> PefTable:
    """Factor table maximizing E_nu[log2 F] subject to validity.

    The objective is strictly concave on the support of nu and the
    constraints are linear, so the maximum is unique there; off-support
    entries are pinned by the active constraints.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    w = _joint_weights(nu, input_dist)
    rows = _constraint_rows(beta, vertices, bias)
    support = w > 0

    def f(F):
        Fs = np.maximum(F, _ENTRY_FLOOR)
        return -float((w[support] * np.log2(Fs[support])).sum())

    def grad(F):
        Fs = np.maximum(F, _ENTRY_FLOOR)
        g = np.zeros(16)
        g[support] = -w[support] / (Fs[support] * math.log(2))
        return g

    res = minimize(
        f,
        np.full(16, 0.9),
        jac=grad,
        method="SLSQP",
        bounds=[(_ENTRY_FLOOR, None)] * 16,
        constraints=[
            {"type": "ineq", "fun": lambda F: 1.0 - rows @ F, "jac": lambda F: -rows}
        ],
        options={"maxiter": 1000, "ftol": 1e-18},
    )
    if not res.success and res.status != 8:  # 8: positive directional derivative noise
        raise NoCertifiableRandomness(
            f"factor optimization did not converge: {res.message} "
            f"(best objective {-res.fun:.3e})"
        )
    return PefTable(np.maximum(res.x, _ENTRY_FLOOR).reshape(4, 4), beta)


def qef_log2_table(pef: PefTable) -> np.ndarray:
    """log2 F - log2 f_max for all 16 cells, (4, 4) [z, c].

    Cells with F = 0 map to -inf; observing such a cell aborts a run.
    """
    with np.errstate(divide="ignore"):
        return np.log2(pef.f) - math.log2(pef.f_max)


def qef_log2(pef: PefTable, c: int, z: int) -> float:
    """Per-trial log2 estimation-factor value for outcome c, setting z."""
    return float(qef_log2_table(pef)[z, c])


def expected_trials(
    pef: PefTable,
    nu: ConditionalDistribution,
    input_dist: InputDistribution,
    sigma: float,
    eps_sigma: float,
) -> float:
    """Expected trial count to certify sigma bits at smoothness eps_sigma:

        n_exp = (beta*sigma + log2(2/eps_sigma^2)) / (E_nu[log2 F] - log2 f_max)
    """
    w = _joint_weights(nu, input_dist)
    logf = qef_log2_table(pef).reshape(-1)
    mean = float((w[w > 0] * logf[w > 0]).sum())
    if mean <= 0:
        raise NoCertifiableRandomness(
            f"expected log2-factor {mean:.3e} per trial is not positive"
        )
    return (pef.beta * sigma + math.log2(2.0 / eps_sigma**2)) / mean


def failure_probability(
    pef: PefTable,
    nu: ConditionalDistribution,
    input_dist: InputDistribution,
    n_budget: int,
    sigma: float,
    eps_sigma: float,
) -> float:
    """One-sided Bernstein bound on missing the entropy threshold.

    For n_budget i.i.d. trials with per-trial value X = log2 F - log2 f_max
    (mean mu, variance V, |X - mu| <= M) and threshold
    T = beta*sigma + log2(2/eps_sigma^2):

        Pr[sum X < T] <= exp( -t^2 / (2 (n V + M t / 3)) ),  t = n mu - T.

    Returns 1.0 when the drift t is non-positive (no useful bound).
    """
    w = _joint_weights(nu, input_dist)
    logf = qef_log2_table(pef).reshape(-1)
    mask = w > 0
    mu = float((w[mask] * logf[mask]).sum())
    var = float((w[mask] * (logf[mask] - mu) ** 2).sum())
    M = float(np.max(np.abs(logf[mask] - mu)))
    thr = pef.beta * sigma + math.log2(2.0 / eps_sigma**2)
    t = n_budget * mu - thr
    if t <= 0:
        return 1.0
    return min(1.0, math.exp(-(t * t) / (2.0 * (n_budget * var + M * t / 3.0))))


def _plan(pef, nu, input_dist, sigma, eps_sigma):
    n_exp = expected_trials(pef, nu, input_dist, sigma, eps_sigma)
    n_budget = math.ceil(2.0 * n_exp)
    w = _joint_weights(nu, input_dist)
    logf = qef_log2_table(pef).reshape(-1)
    mean = float((w[w > 0] * logf[w > 0]).sum())
    return PlanningReport(
        expected_log2_per_trial=mean,
        n_exp=n_exp,
        n_budget=n_budget,
        p_fail_bound=failure_probability(pef, nu, input_dist, n_budget, sigma, eps_sigma),
        entropy_rate=mean / pef.beta,
    )


def optimize_beta(
    nu: ConditionalDistribution,
    input_dist: InputDistribution,
    sigma: float,
    eps_sigma: float,
    vertices: VertexList,
    bias: BiasPolytope,
    beta_range: tuple[float, float] = (1e-3, 0.05),
    scan_step: float = 1e-3,
    refine_tol: float = 1e-6,
    f_max: float = DEFAULT_F_MAX,
) -> tuple[float, PefTable, PlanningReport]:
    """Minimize n_exp over the factor power.

    Coarse scan at ``scan_step`` over ``beta_range`` followed by
    golden-section refinement of the bracketing interval; the certificate
    reports the power rounded to three decimals.
    """
    lo, hi = beta_range
    if not (0 < lo < hi <= 1):
        raise ValueError(f"beta_range {beta_range} not inside (0, 1]")

    cache: dict[float, tuple[float, PefTable]] = {}

    def n_of(beta: float) -> float:
        beta = float(beta)
        if beta not in cache:
            pef = optimize_pef(nu, input_dist, beta, vertices, bias)
            pef = PefTable(pef.f, beta, f_max)
            try:
                val = expected_trials(pef, nu, input_dist, sigma, eps_sigma)
            except NoCertifiableRandomness:
                val = math.inf
            cache[beta] = (val, pef)
        return cache[beta][0]

    grid = np.arange(lo, hi + scan_step / 2, scan_step)
    vals = [n_of(b) for b in grid]
    best = int(np.argmin(vals))
    if not math.isfinite(vals[best]):
        raise NoCertifiableRandomness(
            "no certifiable randomness: expected log2-factor non-positive "
            "for every power in the scan range"
        )
    a = grid[max(0, best - 1)]
    b = grid[min(len(grid) - 1, best + 1)]
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = b - phi * (b - a)
    x2 = a + phi * (b - a)
    f1, f2 = n_of(x1), n_of(x2)
    while b - a > refine_tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - phi * (b - a)
            f1 = n_of(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (b - a)
            f2 = n_of(x2)
    beta_star = min(cache, key=lambda k: cache[k][0])
    _, pef = cache[beta_star]
    return beta_star, pef, _plan(pef, nu, input_dist, sigma, eps_sigma)
