"""Numerical backend selection.

Hot kernels (trial binning, log-QEF accumulation, GF(2^l) polynomial
hashing) exist twice: a numba ``@njit`` implementation and a pure-numpy
fallback with identical semantics.  Selection happens once at import via
the environment variable ``QRANDCERT_BACKEND``:

    auto   (default) use numba when importable, numpy otherwise
    numba  require numba, raise if unavailable
    numpy  force the pure-numpy path

Both paths must agree bitwise on integer kernels and to accumulation
round-off (<= 1e-9 on final sums) on floating-point kernels; the test
suite enforces this.
"""

from __future__ import annotations

import os


def _detect() -> bool:
    choice = os.environ.get("QRANDCERT_BACKEND", "auto").strip().lower()
    if choice in ("", "auto"):
        try:
            import numba  # noqa: F401
        except ImportError:
            return False
        return True
    if choice == "numba":
        import numba  # noqa: F401  raises if missing

        return True
    if choice == "numpy":
        return False
    raise ValueError(
        f"QRANDCERT_BACKEND={choice!r}: expected 'auto', 'numba' or 'numpy'"
    )


USE_NUMBA: bool = _detect()


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
