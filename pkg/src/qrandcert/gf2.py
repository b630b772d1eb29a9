"""Binary-field arithmetic for polynomial hashing.

Field elements of GF(2^l) are GF(2)[x] residues modulo a fixed low-weight
irreducible polynomial.  The modulus per l comes from a shipped table
(version ``v1``): the first irreducible trinomial x^l + x^a + 1 by
ascending a, else the first pentanomial x^l + x^c + x^b + x^a + 1 by
ascending (c, b, a).  For an l outside the table the same deterministic
search runs at call time (slower, identical result rule).

Three representations are used:

* Python ints for reference arithmetic (bit i of the int = coefficient of
  x^i).  This path is authoritative and feeds the others.
* Little-endian uint64 word arrays for kernel state.
* For the batched Horner evaluation of long polynomials, a per-multiplier
  lookup table T[b][v] = (v * x^(8b) * alpha) mod f over byte windows
  (four-Russians style), so one field multiplication is W8 table XORs and
  needs no separate reduction step.

The Horner kernel exists as a numba njit loop and a numpy per-step
vectorization across lanes; both produce identical words.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .backend import USE_NUMBA

__all__ = [
    "MODULUS_TABLE_VERSION",
    "FieldSpec",
    "field_for",
    "find_modulus",
    "clmul_int",
    "mod_reduce_int",
    "mulmod_int",
    "powmod_int",
    "int_to_words",
    "words_to_int",
    "bits_to_coeff_words",
    "build_mult_tables",
    "horner_batch",
    "parity_and",
]

MODULUS_TABLE_VERSION = "v1"


def _load_table() -> dict[int, int]:
    with resources.files("qrandcert.data").joinpath("gf2_moduli.json").open() as fh:
        raw = json.load(fh)
    return {int(k): int(v) for k, v in raw["moduli"].items()}


# ---------------------------------------------------------------------------
# Reference integer arithmetic
# ---------------------------------------------------------------------------


def clmul_int(a: int, b: int) -> int:
    """Carry-less product of two GF(2)[x] polynomials."""
    r = 0
    while b:
        if b & 1:
            r ^= a
        a <<= 1
        b >>= 1
    return r


def mod_reduce_int(a: int, f: int, l: int) -> int:
    while a.bit_length() > l:
        a ^= f << (a.bit_length() - l - 1)
    return a


def mulmod_int(a: int, b: int, f: int, l: int) -> int:
    return mod_reduce_int(clmul_int(a, b), f, l)


def powmod_int(a: int, e: int, f: int, l: int) -> int:
    r = 1
    while e:
        if e & 1:
            r = mulmod_int(r, a, f, l)
        a = mulmod_int(a, a, f, l)
        e >>= 1
    return r


def _sq_spread(a: int) -> int:
    # squaring over GF(2) spreads each bit to the even positions
    r = 0
    i = 0
    while a:
        if a & 1:
            r |= 1 << (2 * i)
        a >>= 1
        i += 1
    return r


def _poly_mod(a: int, b: int) -> int:
    while a.bit_length() >= b.bit_length():
        a ^= b << (a.bit_length() - b.bit_length())
    return a


def _gcd_poly(a: int, b: int) -> int:
    while b:
        a, b = b, _poly_mod(a, b)
    return a


def _is_irreducible(f: int, l: int) -> bool:
    """x^(2^l) == x mod f, and gcd(x^(2^(l/p)) - x, f) = 1 for primes p | l."""

    def sqm(v: int) -> int:
        return mod_reduce_int(_sq_spread(v), f, l)

    a = 2
    for _ in range(l):
        a = sqm(a)
    if a != 2:
        return False
    rest, primes, d = l, set(), 2
    while d * d <= rest:
        while rest % d == 0:
            primes.add(d)
            rest //= d
        d += 1
    if rest > 1:
        primes.add(rest)
    for p in primes:
        a = 2
        for _ in range(l // p):
            a = sqm(a)
        if _gcd_poly(a ^ 2, f) != 1:
            return False
    return True


def find_modulus(l: int) -> int:
    """Deterministic low-weight irreducible modulus search (table rule)."""
    if l < 1:
        raise ValueError("field degree must be >= 1")
    if l == 1:
        return 0b11
    for a in range(1, l):
        f = (1 << l) | (1 << a) | 1
        if _is_irreducible(f, l):
            return f
    for c in range(3, l):
        for b in range(2, c):
            for a in range(1, b):
                f = (1 << l) | (1 << c) | (1 << b) | (1 << a) | 1
                if _is_irreducible(f, l):
                    return f
    raise ValueError(f"no low-weight irreducible modulus found for l={l}")


@dataclass(frozen=True)
class FieldSpec:
    """One GF(2^l) instance: degree, modulus, and derived word geometry."""

    l: int
    modulus: int
    table_version: str

    @property
    def words(self) -> int:
        return (self.l + 63) // 64

    @property
    def bytes_per_element(self) -> int:
        return (self.l + 7) // 8

    @property
    def taps(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.l + 1) if (self.modulus >> i) & 1)

    def reduction_words(self) -> np.ndarray:
        """Low l bits of the modulus as little-endian words (the xor mask
        applied when the x^l bit overflows)."""
        return int_to_words(self.modulus ^ (1 << self.l), self.words)


@lru_cache(maxsize=None)
def field_for(l: int) -> FieldSpec:
    table = _load_table()
    if l in table:
        return FieldSpec(l, table[l], MODULUS_TABLE_VERSION)
    return FieldSpec(l, find_modulus(l), f"{MODULUS_TABLE_VERSION}+computed")


# ---------------------------------------------------------------------------
# Word-array representation
# ---------------------------------------------------------------------------


def int_to_words(v: int, n_words: int) -> np.ndarray:
    return np.array(
        [(v >> (64 * i)) & 0xFFFFFFFFFFFFFFFF for i in range(n_words)], dtype=np.uint64
    )


def words_to_int(words: np.ndarray) -> int:
    v = 0
    for i, w in enumerate(words):
        v |= int(w) << (64 * i)
    return v


def bits_to_coeff_words(bits: np.ndarray, l: int) -> np.ndarray:
    """Chunk a 0/1 bit array into l-bit field elements, msb-first.

    Bit t of a chunk contributes 2^(l-1-t) to the element value; a partial
    final chunk is zero-padded at the low end.  Returns (s, W) uint64 with
    s = ceil(len(bits)/l).
    """
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    if bits.size == 0:
        return np.zeros((0, (l + 63) // 64), dtype=np.uint64)
    s = -(-bits.size // l)
    W = (l + 63) // 64
    W8 = (l + 7) // 8
    padded = np.zeros(s * l, dtype=np.uint8)
    padded[: bits.size] = bits
    rows = padded.reshape(s, l)
    # left-pad each row to a whole number of bytes: leading zeros do not
    # change the msb-first value
    lead = W8 * 8 - l
    if lead:
        rows = np.concatenate([np.zeros((s, lead), dtype=np.uint8), rows], axis=1)
    be_bytes = np.packbits(rows, axis=1)          # most-significant byte first
    le_bytes = be_bytes[:, ::-1]                  # little-endian byte order
    if W * 8 != W8:
        pad = np.zeros((s, W * 8 - W8), dtype=np.uint8)
        le_bytes = np.concatenate([le_bytes, pad], axis=1)
    return np.ascontiguousarray(le_bytes).view("<u8").reshape(s, W)


# ---------------------------------------------------------------------------
# Batched multiplication tables and Horner evaluation
# ---------------------------------------------------------------------------


def build_mult_tables(alphas: np.ndarray, spec: FieldSpec) -> np.ndarray:
    """Byte-window multiplication tables for fixed multipliers.

    ``alphas``: (lanes, W) uint64.  Returns (lanes, W8, 256, W) uint64 with
    T[lane, b, v] = (v * x^(8b) * alpha_lane) mod f, fully reduced, so a
    product is the XOR of W8 table rows selected by the operand's bytes.
    """
    lanes = alphas.shape[0]
    W, W8, l = spec.words, spec.bytes_per_element, spec.l
    red = spec.reduction_words()
    topword, topbit = (l - 1) // 64, np.uint64((l - 1) % 64)
    mask_top = (
        np.uint64(0xFFFFFFFFFFFFFFFF)
        if l % 64 == 0
        else np.uint64((1 << (l % 64)) - 1)
    )

    T = np.zeros((lanes, W8, 256, W), dtype=np.uint64)
    p = alphas.astype(np.uint64).copy()
    for t in range(W8 * 8):
        T[:, t // 8, 1 << (t % 8), :] = p
        # p <- x * p mod f, vectorized over lanes
        hi = (p[:, topword] >> topbit) & np.uint64(1)
        carry = p[:, :-1] >> np.uint64(63)
        p <<= np.uint64(1)
        p[:, 1:] ^= carry
        p[hi == 1] ^= red[None, :]
        p[:, W - 1] &= mask_top
    for v in range(3, 256):
        low = v & (-v)
        rest = v ^ low
        if rest:
            T[:, :, v, :] = T[:, :, rest, :] ^ T[:, :, low, :]
    return T


def _horner_numpy(coeffs: np.ndarray, tables: np.ndarray, state: np.ndarray) -> np.ndarray:
    lanes, W8, _, W = tables.shape
    lane_idx = np.arange(lanes)
    st = state.copy()
    for j in range(coeffs.shape[0]):
        acc = np.zeros((lanes, W), dtype=np.uint64)
        for b in range(W8):
            byte = (st[:, b // 8] >> np.uint64(8 * (b % 8))) & np.uint64(0xFF)
            acc ^= tables[lane_idx, b, byte.astype(np.intp)]
        st = acc ^ coeffs[j][None, :]
    return st


if USE_NUMBA:
    from numba import njit, uint64

    @njit(cache=True)
    def _horner_numba(coeffs, tables, state):
        lanes, W8, _, W = tables.shape
        s = coeffs.shape[0]
        out = state.copy()
        acc = np.zeros(W, dtype=np.uint64)
        for lane in range(lanes):
            for j in range(s):
                for ww in range(W):
                    acc[ww] = uint64(0)
                for b in range(W8):
                    byte = (out[lane, b // 8] >> uint64(8 * (b % 8))) & uint64(0xFF)
                    idx = np.intp(byte)
                    for ww in range(W):
                        acc[ww] ^= tables[lane, b, idx, ww]
                for ww in range(W):
                    out[lane, ww] = acc[ww] ^ coeffs[j, ww]
        return out


def horner_batch(coeffs: np.ndarray, tables: np.ndarray, state: np.ndarray) -> np.ndarray:
    """Evaluate state <- state * alpha + c_j over all coefficients, for all
    lanes at once.  ``coeffs``: (s, W) shared across lanes; ``tables`` from
    build_mult_tables; ``state``: (lanes, W).  Returns the new state.
    """
    coeffs = np.ascontiguousarray(coeffs, dtype=np.uint64)
    tables = np.ascontiguousarray(tables)
    state = np.ascontiguousarray(state, dtype=np.uint64)
    if USE_NUMBA:
        return _horner_numba(coeffs, tables, state)
    return _horner_numpy(coeffs, tables, state)


def parity_and(values: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Per-lane parity of popcount(values & masks); (lanes, W) -> (lanes,) uint8."""
    return (
        np.bitwise_count(np.bitwise_and(values, masks)).sum(axis=1) & 1
    ).astype(np.uint8)
