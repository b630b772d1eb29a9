"""Hot numeric kernels with numba and pure-numpy implementations.

The numba path processes trials one at a time (Kahan-compensated running
sum, per-trial threshold check); the numpy path is vectorized per chunk
with a compensated carry across chunks.  Both stop at the first trial
whose running sum reaches the threshold and agree on the final sum to
accumulation round-off (well below the 1e-3 slack at the entropy
threshold for any realistic trial count).
"""

from __future__ import annotations

import numpy as np

from .backend import USE_NUMBA

__all__ = ["accumulate_codes", "bin_trials", "USE_NUMBA"]


def _bin_trials_numpy(u_z, u_c, cum_z, cum_c):
    z = np.searchsorted(cum_z, u_z, side="right").astype(np.uint8)
    np.minimum(z, 3, out=z)
    rows = cum_c[z]  # (n, 4)
    c = (u_c[:, None] >= rows[:, :3]).sum(axis=1).astype(np.uint8)
    return z * 4 + c


def _accumulate_numpy(codes, logf, thr, state):
    L, comp = state
    vals = logf[codes]
    cs = np.cumsum(vals) + (L - comp)
    hits = np.flatnonzero(cs >= thr)
    if hits.size:
        idx = int(hits[0])
        return (float(cs[idx]), 0.0), idx + 1
    # compensated carry: chunk total via pairwise sum
    y = float(vals.sum()) - comp
    t = L + y
    comp = (t - L) - y
    return (t, comp), -1


if USE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _bin_trials_numba(u_z, u_c, cum_z, cum_c):
        n = u_z.shape[0]
        out = np.empty(n, dtype=np.uint8)
        for i in range(n):
            z = 0
            while z < 3 and u_z[i] >= cum_z[z]:
                z += 1
            c = 0
            while c < 3 and u_c[i] >= cum_c[z, c]:
                c += 1
            out[i] = z * 4 + c
        return out

    @njit(cache=True)
    def _accumulate_numba(codes, logf, thr, L, comp):
        for i in range(codes.shape[0]):
            y = logf[codes[i]] - comp
            t = L + y
            comp = (t - L) - y
            L = t
            if L >= thr:
                return L, comp, i + 1
        return L, comp, -1


def bin_trials(u_z: np.ndarray, u_c: np.ndarray, cum_z: np.ndarray, cum_c: np.ndarray) -> np.ndarray:
    """Map per-trial uniforms to cell codes z*4+c by two-stage inverse CDF.

    ``cum_z`` is the 4-cell cumulative of the input distribution, ``cum_c``
    the (4, 4) per-setting cumulative of the conditional distribution.
    """
    if USE_NUMBA:
        return _bin_trials_numba(u_z, u_c, np.ascontiguousarray(cum_z), np.ascontiguousarray(cum_c))
    return _bin_trials_numpy(u_z, u_c, cum_z, cum_c)


def accumulate_codes(codes, logf, thr, state):
    """Extend the running log2-factor sum by one chunk of cell codes.

    state is (L, kahan_compensation).  Returns (new_state, stop) where
    stop is the 1-based index within the chunk of the first trial whose
    running sum reached ``thr``, or -1 if the threshold was not crossed.
    """
    if USE_NUMBA:
        L, comp, stop = _accumulate_numba(codes, logf, thr, state[0], state[1])
        return (L, comp), stop
    return _accumulate_numpy(codes, logf, thr, state)
