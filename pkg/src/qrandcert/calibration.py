"""Maximum-likelihood calibration of the device behaviour and the
statistical-strength planning figure.

The fit maximizes sum_cz n_cz * log mu(c|z) over the constrained
conditional polytope.  The objective is strictly concave and the feasible
set convex, so the maximizer is unique.  We solve in Collins-Gisin
coordinates (normalization and non-signaling exact by construction) with
scipy's trust-region SQP, then polish with Newton steps on the active
manifold until the KKT residual is at numerical noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import LinearConstraint, minimize

from .bell_model import (
    CG_MAP,
    CG_OFFSET,
    ConditionalDistribution,
    InputDistribution,
    PolytopeH,
    chsh_sign_rows,
    deterministic_conditionals,
)

__all__ = ["CountTable", "MaxLikelihoodResult", "max_likelihood", "statistical_strength"]

_KKT_TOL = 1e-9
_CHSH_CG = chsh_sign_rows() @ CG_MAP
_CHSH_OFF = chsh_sign_rows() @ CG_OFFSET


class ConvergenceError(RuntimeError):
    """Solver failed to reach the requested KKT residual.

    Carries the best feasible iterate and its residual so callers can
    decide whether the partial answer is usable.
    """

    def __init__(self, msg, best=None, residual=None):
        super().__init__(msg)
        self.best = best
        self.residual = residual


@dataclass(frozen=True)
class CountTable:
    """Trial counts n_cz as a (4, 4) integer array [z, c]."""

    counts: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.counts, dtype=np.int64).reshape(4, 4).copy()
        if np.any(arr < 0):
            raise ValueError("counts must be non-negative")
        arr.flags.writeable = False
        object.__setattr__(self, "counts", arr)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def per_setting(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def __add__(self, other: "CountTable") -> "CountTable":
        return CountTable(self.counts + other.counts)


@dataclass(frozen=True)
class MaxLikelihoodResult:
    nu: ConditionalDistribution
    log_likelihood: float
    kkt_residual: float
    iterations: int


def _loglik(counts: np.ndarray, mu: np.ndarray) -> float:
    n = counts.reshape(-1)
    mask = n > 0
    return float((n[mask] * np.log(mu[mask])).sum())


def _kkt_residual(counts, x, active_rows):
    """Norm of the gradient projected onto the active-constraint null space,
    scaled by the total count (gradient entries are O(N))."""
    n = counts.reshape(-1).astype(float)
    mu = CG_MAP @ x + CG_OFFSET
    g = CG_MAP.T @ np.divide(n, mu, out=np.zeros_like(mu), where=mu > 0)
    if active_rows:
        A = np.array(active_rows)
        # project g onto null(A)
        q, _ = np.linalg.qr(A.T, mode="reduced")
        g = g - q @ (q.T @ g)
    return float(np.linalg.norm(g)) / max(1.0, counts.sum())


def max_likelihood(
    counts: CountTable,
    h: PolytopeH,
    kkt_tol: float = _KKT_TOL,
    max_iter: int = 2000,
) -> MaxLikelihoodResult:
    """Unique maximizer of sum n_cz log mu(c|z) over the polytope ``h``.

    Raises ConvergenceError (carrying the best feasible iterate) if the
    projected-gradient residual cannot be pushed below ``kkt_tol``.
    """
    n = counts.counts.reshape(-1).astype(float)
    if np.any(counts.per_setting() == 0):
        raise ValueError("every setting needs at least one calibration count")

    def f(x):
        mu = CG_MAP @ x + CG_OFFSET
        if np.any(mu[n > 0] <= 0):
            return np.inf
        return -_loglik(counts.counts, mu)

    def grad(x):
        mu = np.maximum(CG_MAP @ x + CG_OFFSET, 1e-300)
        return -CG_MAP.T @ (n / mu)

    def hess(x):
        mu = np.maximum(CG_MAP @ x + CG_OFFSET, 1e-300)
        return CG_MAP.T @ (CG_MAP * (n / mu**2)[:, None])

    floor = 1e-12  # keeps log finite; zero-count cells may sit at the floor
    cons = [LinearConstraint(CG_MAP, floor - CG_OFFSET, np.inf)]
    if h.tsirelson:
        bound = float(h.b_ineq[-1])
        cons.append(
            LinearConstraint(_CHSH_CG, -bound - _CHSH_OFF, bound - _CHSH_OFF)
        )

    x0 = np.array([0.5] * 4 + [0.25] * 4)
    res = minimize(
        f,
        x0,
        jac=grad,
        hess=hess,
        method="trust-constr",
        constraints=cons,
        options={"gtol": 1e-13, "xtol": 1e-16, "maxiter": max_iter},
    )
    x = res.x

    # Newton polish on the active manifold.  Identify active rows (CHSH
    # facets and probability floor), then take equality-constrained Newton
    # steps; with no active rows this is plain Newton on a strictly concave
    # function and converges quadratically.
    for _ in range(50):
        mu = CG_MAP @ x + CG_OFFSET
        active = []
        if h.tsirelson:
            vals = _CHSH_CG @ x + _CHSH_OFF
            for s in range(4):
                if abs(abs(vals[s]) - bound) < 1e-9:
                    active.append(np.sign(vals[s]) * _CHSH_CG[s])
        for i in range(16):
            if n[i] == 0 and mu[i] < floor * 4:
                active.append(-CG_MAP[i])
        g = grad(x)
        H = hess(x)
        if active:
            A = np.array(active)
            kkt = np.block([[H, A.T], [A, np.zeros((len(active),) * 2)]])
            rhs = np.concatenate([-g, np.zeros(len(active))])
            try:
                step = np.linalg.solve(kkt, rhs)[:8]
            except np.linalg.LinAlgError:
                break
        else:
            try:
                step = np.linalg.solve(H, -g)
            except np.linalg.LinAlgError:
                break
        # damped step to stay strictly feasible in mu
        t = 1.0
        for _ in range(60):
            mu_new = CG_MAP @ (x + t * step) + CG_OFFSET
            ok = np.all(mu_new[n > 0] > 0)
            if ok and h.tsirelson:
                ok = np.all(np.abs(_CHSH_CG @ (x + t * step) + _CHSH_OFF) <= bound + 1e-15)
            if ok and np.all(mu_new >= -1e-15):
                break
            t *= 0.5
        else:
            break
        x_new = x + t * step
        fx = f(x)
        if f(x_new) > fx + 1e-12 * max(1.0, abs(fx)):  # allow float noise at |f| scale
            break
        x = x_new
        if np.linalg.norm(t * step) < 1e-15:
            break

    mu = np.clip(CG_MAP @ x + CG_OFFSET, 0.0, None)
    active_rows = []
    if h.tsirelson:
        vals = _CHSH_CG @ x + _CHSH_OFF
        for s in range(4):
            if abs(abs(vals[s]) - bound) < 1e-8:
                active_rows.append(np.sign(vals[s]) * _CHSH_CG[s])
    for i in range(16):
        if n[i] == 0 and mu[i] < floor * 4:
            active_rows.append(-CG_MAP[i])
            mu[i] = 0.0
    mu = mu.reshape(4, 4)
    mu = mu / mu.sum(axis=1, keepdims=True)
    nu = ConditionalDistribution(mu)
    residual = _kkt_residual(counts.counts, x, active_rows)
    result = MaxLikelihoodResult(
        nu=nu,
        log_likelihood=_loglik(counts.counts, nu.flat()),
        kkt_residual=residual,
        iterations=int(res.niter),
    )
    if residual > kkt_tol:
        raise ConvergenceError(
            f"maximum-likelihood fit stalled at KKT residual {residual:.2e} "
            f"(requested {kkt_tol:.0e})",
            best=result,
            residual=residual,
        )
    return result


def statistical_strength(
    nu: ConditionalDistribution,
    input_dist: InputDistribution | None = None,
) -> float:
    """Minimum KL divergence (bits/trial) of the trial distribution from
    the local-realistic set.

    Minimizes sum_cz p(z) nu(c|z) log2[nu(c|z)/lam(c|z)] over lam in the
    convex hull of the 16 deterministic behaviours; zero iff nu itself is
    local.  Solved over the 16 hull weights on the probability simplex.
    """
    if input_dist is None:
        input_dist = InputDistribution.uniform()
    D = np.stack([d.probs.reshape(-1) for d in deterministic_conditionals()])
    target = nu.flat()
    pz = np.repeat(input_dist.probs, 4)
    w_cells = pz * target  # joint trial-result distribution
    support = w_cells > 0

    def f(w):
        lam = np.maximum(w @ D, 1e-300)
        return float(
            (w_cells[support] * np.log2(target[support] / lam[support])).sum()
        )

    def grad(w):
        lam = np.maximum(w @ D, 1e-300)
        g_lam = np.zeros(16)
        g_lam[support] = -w_cells[support] / (lam[support] * math.log(2))
        return D @ g_lam

    res = minimize(
        f,
        np.full(16, 1 / 16),
        jac=grad,
        method="SLSQP",
        bounds=[(0.0, 1.0)] * 16,
        constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1.0,
                      "jac": lambda w: np.ones(16)}],
        options={"maxiter": 800, "ftol": 1e-16},
    )
    if not res.success and res.fun > 1e-10:
        # retry from the closest single deterministic point
        best = int(np.argmin([f(np.eye(16)[i]) for i in range(16)]))
        w0 = np.full(16, 1e-3)
        w0[best] = 1 - 15e-3
        res2 = minimize(
            f, w0, jac=grad, method="SLSQP", bounds=[(0.0, 1.0)] * 16,
            constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1.0,
                          "jac": lambda w: np.ones(16)}],
            options={"maxiter": 800, "ftol": 1e-16},
        )
        if res2.fun < res.fun:
            res = res2
    return max(0.0, float(res.fun))
