"""Seeded strong extractor: parameter solver, block weak design, and the
polynomial-hashing 1-bit extractor composed over the design.

Parameter rules for extracting k bits from an m-bit input at extractor
error eps_x (trace-distance budget delta_x = eps_x^2 / 2):

* w is the smallest prime above 2*ceil(log2(4 m k^2 / delta_x^2)); each
  1-bit extraction consumes one w-bit seed slice.
* The seed provides ``blocks`` segments of w^2 bits, with
  blocks = max(2, 1 + ceil((log2(k-e) - log2(w-e)) / (log2 e - log2(e-1))));
  for k <= e + 1 the ceiling argument degenerates and the floor of 2
  applies.  Designs with k <= w index only the first segment, so
  d_used = w^2 while d_provided = blocks * w^2.

The weak design inside a segment is the polynomial-graph construction over
GF(w): set i is {a*w + p_i(a) : a in [0, w)} with p_i enumerated by the
base-w digits of i, degree < max(1, ceil(log_w(sets in segment))).  Sets
in different segments never share seed bits.  Segments are filled
greedily, each taking ceil(remaining/e) sets (all remaining once they fit
a single segment's constant polynomials), which keeps every pairwise
overlap weight far inside the 2ek budget.

The 1-bit extractor splits its w-bit seed slice into alpha (first
l = floor(w/2) bits) and gamma (next l bits, any leftover bit ignored),
parses the input as ceil(m/l) coefficients of a GF(2^l) polynomial
(msb-first within each l-bit block, zero-padded at the end) and outputs
the parity of (p(alpha) AND gamma).  Evaluation order never changes the
output: bits are independent given (input, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import gf2

__all__ = [
    "ExtractorParams",
    "WeakDesign",
    "extractor_params",
    "weak_design",
    "one_bit_extract",
    "extract",
    "extraction_header",
]

_E = math.e


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n < 4:
        return True
    if n % 2 == 0:
        return False
    d = 3
    while d * d <= n:
        if n % d == 0:
            return False
        d += 2
    return True


def _next_prime_above(x: int) -> int:
    n = x + 1
    while not _is_prime(n):
        n += 1
    return n


def _segment_sizes(k: int, w: int) -> list[int]:
    """Greedy block fill: ceil(remaining/e) per segment until the rest fits
    one segment of constant polynomials."""
    sizes = []
    remaining = k
    while remaining > 0:
        take = remaining if remaining <= w else math.ceil(remaining / _E)
        sizes.append(take)
        remaining -= take
    return sizes


@dataclass(frozen=True)
class ExtractorParams:
    m: int                # input length (bits)
    k: int                # output length (bits)
    eps_x: float
    delta_x: float
    w: int                # prime; seed bits per 1-bit extraction
    blocks: int           # seed segments provided
    d_provided: int       # blocks * w^2
    d_used: int           # segments actually indexed * w^2

    @property
    def field_bits(self) -> int:
        return self.w // 2


def extractor_params(m: int, k: int, eps_x: float) -> ExtractorParams:
    """Deterministic parameter solve for an (m -> k, eps_x) extraction."""
    if not m >= k >= 1:
        raise ValueError(f"need m >= k >= 1, got m={m}, k={k}")
    if not 0 < eps_x <= 1:
        raise ValueError(f"eps_x={eps_x} outside (0, 1]")
    delta_x = eps_x**2 / 2.0
    log2_arg = math.log2(4 * m) + 2 * math.log2(k) - 2 * math.log2(delta_x)
    w = _next_prime_above(2 * math.ceil(log2_arg))
    if k - _E <= 0 or w - _E >= k - _E:
        blocks = 2
    else:
        blocks = max(
            2,
            1
            + math.ceil(
                (math.log2(k - _E) - math.log2(w - _E))
                / (math.log2(_E) - math.log2(_E - 1.0))
            ),
        )
    used = len(_segment_sizes(k, w))
    blocks = max(blocks, used)
    return ExtractorParams(
        m=m,
        k=k,
        eps_x=eps_x,
        delta_x=delta_x,
        w=w,
        blocks=blocks,
        d_provided=blocks * w * w,
        d_used=used * w * w,
    )


@dataclass(frozen=True)
class WeakDesign:
    """k seed-index sets of size w inside [0, d_provided)."""

    sets: np.ndarray  # (k, w) int64, each row ascending
    w: int
    d_provided: int

    def __len__(self) -> int:
        return self.sets.shape[0]


def _poly_digits(i: int, w: int, deg: int) -> list[int]:
    digits = []
    for _ in range(deg):
        digits.append(i % w)
        i //= w
    return digits


def weak_design(params: ExtractorParams) -> WeakDesign:
    """Polynomial-graph design per seed segment, segments filled greedily."""
    w, k = params.w, params.k
    a = np.arange(w, dtype=np.int64)
    rows = []
    offset = 0
    for size in _segment_sizes(k, w):
        deg = 1
        while w**deg < size:
            deg += 1
        for i in range(size):
            digits = _poly_digits(i, w, deg)
            val = np.zeros(w, dtype=np.int64)
            for d in reversed(digits):
                val = (val * a + d) % w
            rows.append(np.sort(a * w + val) + offset)
        offset += w * w
    sets = np.stack(rows)
    if sets.max() >= params.d_provided:
        raise AssertionError("design indexed past the provided seed length")
    return WeakDesign(sets=sets, w=w, d_provided=params.d_provided)


def _parse_seed_slices(seed_bits: np.ndarray, design: WeakDesign, l: int):
    """alpha and gamma word arrays for every set of the design.

    Within a slice the first l bits form alpha, the next l gamma, both
    msb-first; for odd w the final bit is ignored.
    """
    slices = seed_bits[design.sets]            # (k, w)
    W = (l + 63) // 64
    k = slices.shape[0]
    alphas = np.zeros((k, W), dtype=np.uint64)
    gammas = np.zeros((k, W), dtype=np.uint64)
    for i in range(k):
        alphas[i] = gf2.bits_to_coeff_words(slices[i, :l], l)[0]
        gammas[i] = gf2.bits_to_coeff_words(slices[i, l : 2 * l], l)[0]
    return alphas, gammas


def _evaluate_polynomial(coeffs: np.ndarray, alphas: np.ndarray, spec: gf2.FieldSpec) -> np.ndarray:
    """p(alpha) per lane for the shared coefficient sequence (msb-first
    Horner), exploiting any run of trailing zero coefficients through a
    single per-lane exponentiation."""
    lanes = alphas.shape[0]
    W = spec.words
    s = coeffs.shape[0]
    nz = np.flatnonzero(coeffs.any(axis=1))
    if nz.size == 0:
        return np.zeros((lanes, W), dtype=np.uint64)
    head = int(nz[-1]) + 1
    tail = s - head
    tables = gf2.build_mult_tables(alphas, spec)
    state = np.broadcast_to(coeffs[0], (lanes, W)).copy()
    state = gf2.horner_batch(coeffs[1:head], tables, state)
    if tail:
        out = np.empty_like(state)
        for i in range(lanes):
            a_int = gf2.words_to_int(alphas[i])
            st_int = gf2.words_to_int(state[i])
            mult = gf2.powmod_int(a_int, tail, spec.modulus, spec.l)
            out[i] = gf2.int_to_words(
                gf2.mulmod_int(st_int, mult, spec.modulus, spec.l), W
            )
        state = out
    return state


def one_bit_extract(input_bits: np.ndarray, seed_slice: np.ndarray) -> int:
    """Single-bit extraction from an input bit array and a w-bit seed slice."""
    seed_slice = np.asarray(seed_slice, dtype=np.uint8).reshape(-1)
    input_bits = np.asarray(input_bits, dtype=np.uint8).reshape(-1)
    w = seed_slice.size
    l = w // 2
    if l < 1:
        raise ValueError(f"seed slice of {w} bits is too short")
    spec = gf2.field_for(l)
    coeffs = gf2.bits_to_coeff_words(input_bits, l)
    alphas = gf2.bits_to_coeff_words(seed_slice[:l], l).reshape(1, -1)
    gammas = gf2.bits_to_coeff_words(seed_slice[l : 2 * l], l).reshape(1, -1)
    value = _evaluate_polynomial(coeffs, alphas, spec)
    return int(gf2.parity_and(value, gammas)[0])


def extract(
    input_bits: np.ndarray,
    seed_bits: np.ndarray,
    params: ExtractorParams,
    design: WeakDesign | None = None,
) -> np.ndarray:
    """k-bit extraction; bit i applies the 1-bit extractor to the seed
    restricted to design set i (ascending index order).  Deterministic in
    (input, seed); output bits are mutually independent computations."""
    input_bits = np.asarray(input_bits, dtype=np.uint8).reshape(-1)
    seed_bits = np.asarray(seed_bits, dtype=np.uint8).reshape(-1)
    if input_bits.size != params.m:
        raise ValueError(f"input is {input_bits.size} bits, expected m={params.m}")
    if seed_bits.size != params.d_provided:
        raise ValueError(
            f"seed is {seed_bits.size} bits, expected d_provided={params.d_provided}"
        )
    if design is None:
        design = weak_design(params)
    if len(design) != params.k or design.w != params.w:
        raise ValueError("design does not match extractor parameters")
    l = params.field_bits
    spec = gf2.field_for(l)
    coeffs = gf2.bits_to_coeff_words(input_bits, l)
    alphas, gammas = _parse_seed_slices(seed_bits, design, l)
    values = _evaluate_polynomial(coeffs, alphas, spec)
    return gf2.parity_and(values, gammas)


def extraction_header(params: ExtractorParams) -> dict:
    """Self-describing parameter block recorded with every extraction."""
    spec = gf2.field_for(params.field_bits)
    return {
        "m": params.m,
        "k": params.k,
        "eps_x": params.eps_x,
        "delta_x": params.delta_x,
        "w": params.w,
        "blocks": params.blocks,
        "d_provided": params.d_provided,
        "d_used": params.d_used,
        "field_bits": params.field_bits,
        "modulus_taps": list(spec.taps),
        "modulus_table_version": spec.table_version,
    }
