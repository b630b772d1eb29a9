"""Sequential randomness-accumulation protocol: parameter planning, running
log2-factor accumulation with early stopping, and certificate assembly.

A run succeeds at the first trial i where

    (L_i - log2(2/eps_sigma^2)) / beta  >=  sigma

with L_i the running sum of per-trial log2 estimation-factor values.  The
threshold comparison is exact (no epsilon slack): the soundness direction
is never relaxed.  Trials after the stopping index are ignored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from . import _kernels
from .bell_model import TrialRecord
from .calibration import CountTable
from .pef import PefTable, qef_log2_table

__all__ = [
    "ProtocolParams",
    "RunCertificate",
    "ProtocolAbort",
    "plan_parameters",
    "certified_entropy",
    "accumulate",
    "accumulate_counts",
    "as_code_array",
]


class ProtocolAbort(RuntimeError):
    """A run hit an invalid trial or a zero-factor cell and cannot continue."""


@dataclass(frozen=True)
class ProtocolParams:
    """Request parameters and the entropy threshold derived from them."""

    k: int
    eps: float
    eps_sigma: float
    eps_x: float
    sigma: int
    n_budget: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        for name in ("eps", "eps_sigma", "eps_x"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name}={v} outside (0, 1]")
        if self.eps_sigma + self.eps_x > self.eps * (1 + 1e-12):
            raise ValueError("eps_sigma + eps_x exceeds the total error budget")
        need = sigma_lower_bound(self.k, self.eps_x)
        if self.sigma < need - 1e-9:
            raise ValueError(
                f"sigma={self.sigma} below the extractor requirement {need:.3f}"
            )

    def with_budget(self, n_budget: int) -> "ProtocolParams":
        return ProtocolParams(
            self.k, self.eps, self.eps_sigma, self.eps_x, self.sigma, int(n_budget)
        )

    @property
    def log2_threshold_offset(self) -> float:
        return math.log2(2.0 / self.eps_sigma**2)


@dataclass(frozen=True)
class RunCertificate:
    """Outcome of one protocol instance."""

    L: float
    n_act: int
    success: bool
    certified_entropy: float
    params: ProtocolParams
    pef: PefTable
    extracted: bytes | None = None
    meta: dict = field(default_factory=dict)


def sigma_lower_bound(k: int, eps_x: float) -> float:
    """Smallest admissible entropy threshold for a k-bit request:
    k + 4 log2 k + 4 log2(2/eps_x^2) + 6."""
    return k + 4 * math.log2(k) + 4 * math.log2(2.0 / eps_x**2) + 6


def plan_parameters(k: int, eps: float, split_sigma: float = 0.8) -> ProtocolParams:
    """Split the error budget and pick the smallest integer threshold.

    ``split_sigma`` is the fraction of the total error assigned to entropy
    smoothness; the rest goes to the extractor.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0 < eps <= 1:
        raise ValueError(f"eps={eps} outside (0, 1]")
    if not 0 < split_sigma < 1:
        raise ValueError(f"split_sigma={split_sigma} outside (0, 1)")
    eps_sigma = split_sigma * eps
    eps_x = (1.0 - split_sigma) * eps
    sigma = math.ceil(sigma_lower_bound(k, eps_x))
    return ProtocolParams(k=k, eps=eps, eps_sigma=eps_sigma, eps_x=eps_x, sigma=sigma)


def certified_entropy(L: float, beta: float, eps_sigma: float) -> float:
    """Entropy certified by a final running value L: (L - log2(2/eps_sigma^2)) / beta."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    return (L - math.log2(2.0 / eps_sigma**2)) / beta


def as_code_array(item) -> np.ndarray:
    """Normalize a stream element to a uint8 array of cell codes z*4+c.

    Accepts a single TrialRecord, an ndarray of codes (uint8, values < 16),
    or an (n, 4) ndarray of [x, y, a, b] bit columns.
    """
    if isinstance(item, TrialRecord):
        return np.array([item.code], dtype=np.uint8)
    arr = np.asarray(item)
    if arr.ndim == 1:
        if arr.size and (arr.max() > 15 or arr.min() < 0):
            raise ProtocolAbort(f"invalid cell code in stream (max={arr.max()})")
        return arr.astype(np.uint8, copy=False)
    if arr.ndim == 2 and arr.shape[1] == 4:
        if arr.size and (arr.max() > 1 or arr.min() < 0):
            raise ProtocolAbort("trial bits must be 0 or 1")
        x, y, a, b = (arr[:, i].astype(np.uint8) for i in range(4))
        return (x + 2 * y) * 4 + (a + 2 * b)
    raise ProtocolAbort(f"unrecognized stream element of shape {arr.shape}")


def _chunks(stream: Iterable) -> Iterator[np.ndarray]:
    pending: list[TrialRecord] = []
    for item in stream:
        if isinstance(item, TrialRecord):
            pending.append(item)
            if len(pending) >= 65536:
                yield np.array([t.code for t in pending], dtype=np.uint8)
                pending.clear()
        else:
            if pending:
                yield np.array([t.code for t in pending], dtype=np.uint8)
                pending.clear()
            yield as_code_array(item)
    if pending:
        yield np.array([t.code for t in pending], dtype=np.uint8)


def accumulate(
    stream: Iterable,
    pef: PefTable,
    params: ProtocolParams,
    subblock_size: int | None = None,
) -> RunCertificate:
    """Run the accumulation stage over a trial stream.

    The stream may yield TrialRecord objects or numpy chunks (cell codes or
    [x, y, a, b] rows); order is preserved and at most ``params.n_budget``
    trials are consumed.  With ``subblock_size`` set, the stopping rule is
    evaluated only at subblock boundaries instead of per trial.
    """
    if params.n_budget is None:
        raise ValueError("params.n_budget must be set before accumulation")
    logf = np.ascontiguousarray(qef_log2_table(pef).reshape(-1))
    beta = pef.beta
    thr = beta * params.sigma + params.log2_threshold_offset
    observed_zero = np.flatnonzero(np.isneginf(logf))
    check_thr = thr if subblock_size is None else math.inf

    state = (0.0, 0.0)
    n_seen = 0
    pending_since_check = 0
    stop_at = -1
    for chunk in _chunks(stream):
        if n_seen >= params.n_budget:
            break
        if chunk.size > params.n_budget - n_seen:
            chunk = chunk[: params.n_budget - n_seen]
        if observed_zero.size and np.any(np.isin(chunk, observed_zero)):
            raise ProtocolAbort(
                "zero-valued factor cell observed in the stream; the running "
                "product is annihilated and the run cannot certify anything"
            )
        state, rel = _kernels.accumulate_codes(chunk, logf, check_thr, state)
        if rel >= 0:
            n_seen += rel
            stop_at = n_seen
            break
        n_seen += chunk.size
        if subblock_size is not None:
            pending_since_check += chunk.size
            if pending_since_check >= subblock_size:
                pending_since_check = 0
                if state[0] >= thr:
                    stop_at = n_seen
                    break
    if subblock_size is not None and stop_at < 0 and state[0] >= thr:
        stop_at = n_seen

    L = state[0]
    success = stop_at > 0
    n_act = stop_at if success else n_seen
    return RunCertificate(
        L=L,
        n_act=n_act,
        success=success,
        certified_entropy=certified_entropy(L, beta, params.eps_sigma),
        params=params,
        pef=pef,
    )


def accumulate_counts(
    counts: CountTable, pef: PefTable, params: ProtocolParams
) -> RunCertificate:
    """Batch replay of a full count table (no early stopping).

    The final running value depends only on the multiset of observed cells,
    so it can be formed directly as sum n_cz * log2-factor(cz).
    """
    logf = qef_log2_table(pef)
    n = counts.counts
    if np.any(np.isneginf(logf[n > 0])):
        raise ProtocolAbort("zero-valued factor cell has nonzero count")
    mask = n > 0
    L = float((n[mask] * logf[mask]).sum())
    ent = certified_entropy(L, pef.beta, params.eps_sigma)
    return RunCertificate(
        L=L,
        n_act=counts.total,
        success=ent >= params.sigma,
        certified_entropy=ent,
        params=params,
        pef=pef,
    )
