"""Core CHSH domain model: trials, input-bias polytope, and the constrained
set of device behaviours (non-signaling + Tsirelson-bounded conditional
distributions) with exact vertex enumeration.

Conventions used throughout the package:

* A trial has settings ``x, y`` and outcomes ``a, b``, all single bits.
* The joint setting ``z = x + 2*y`` and joint outcome ``c = a + 2*b``, so
  both axes run in the order (00), (10), (01), (11).
* A conditional distribution is a ``(4, 4)`` array ``probs[z, c]`` holding
  nu(c|z); the same row/column layout is used for count tables and
  estimation-factor tables.

Internally the conditional polytope is handled in Collins-Gisin
coordinates ``(pA(0|x=0), pA(0|x=1), pB(0|y=0), pB(0|y=1), P(00|z) for the
four z)``, an 8-dimensional parameterization in which normalization and
non-signaling hold by construction.  Vertex enumeration runs the double
description method in exact rational arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product

import numpy as np

__all__ = [
    "TSIRELSON_BOUND",
    "TrialRecord",
    "InputDistribution",
    "BiasPolytope",
    "ConditionalDistribution",
    "PolytopeH",
    "VertexList",
    "bias_vertices",
    "build_polytope",
    "enumerate_vertices",
    "chsh_value",
    "contains",
    "uniform_conditional",
    "deterministic_conditionals",
    "pr_box",
]

# Rational upper bound on 2*sqrt(2) = 2.82842712474619009760...,
# exceeding it by ~9e-16.  Enlarging the polytope is conservative: factor
# constraints checked over a superset remain valid for the true set.
TSIRELSON_BOUND = Fraction(2828427124746191, 10**15)

_FLOAT_TSIRELSON = float(TSIRELSON_BOUND)


class InvalidDistributionError(ValueError):
    """A probability table violates non-negativity or normalization."""


class DegenerateConstraintError(RuntimeError):
    """Vertex enumeration met a numerically/combinatorially bad system."""


@dataclass(frozen=True)
class TrialRecord:
    """One Bell trial: settings (x, y), outcomes (a, b), all in {0, 1}."""

    x: int
    y: int
    a: int
    b: int

    def __post_init__(self):
        for name in ("x", "y", "a", "b"):
            v = getattr(self, name)
            if v not in (0, 1):
                raise ValueError(f"trial field {name}={v!r} is not a bit")

    @property
    def z(self) -> int:
        return self.x + 2 * self.y

    @property
    def c(self) -> int:
        return self.a + 2 * self.b

    @property
    def code(self) -> int:
        """Flat cell index z*4 + c, the canonical 16-cell code."""
        return self.z * 4 + self.c


def _as_prob_vector(probs, n, name):
    arr = np.asarray(probs, dtype=float).reshape(-1)
    if arr.size != n:
        raise InvalidDistributionError(f"{name} needs {n} entries, got {arr.size}")
    if np.any(arr < -1e-12):
        raise InvalidDistributionError(f"{name} has negative entries")
    return arr


@dataclass(frozen=True)
class InputDistribution:
    """Distribution nu(z) over the joint setting z, order (00),(10),(01),(11)."""

    probs: np.ndarray

    def __post_init__(self):
        arr = _as_prob_vector(self.probs, 4, "InputDistribution")
        if abs(arr.sum() - 1.0) > 1e-12:
            raise InvalidDistributionError(
                f"input distribution sums to {arr.sum()!r}, not 1"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "probs", arr)

    @staticmethod
    def uniform() -> "InputDistribution":
        return InputDistribution(np.full(4, 0.25))


@dataclass(frozen=True)
class BiasPolytope:
    """Joint-setting distributions reachable under per-bit adversarial bias.

    The set of joint distributions of two independent bits, each within
    eps_b of fair, has four extreme points (p^2,pq,pq,q^2) and the three
    ways of redistributing it, with p = 1/2 + eps_b, q = 1 - p.
    """

    eps_b: float
    vertices: tuple[InputDistribution, ...]

    def as_array(self) -> np.ndarray:
        """Vertices stacked as a (4, 4) array, row k = nu_k(z)."""
        return np.stack([v.probs for v in self.vertices])


@dataclass(frozen=True)
class ConditionalDistribution:
    """Conditional outcome distribution nu(c|z) as a (4, 4) array [z, c]."""

    probs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=float).reshape(4, 4)
        if np.any(arr < -1e-12):
            raise InvalidDistributionError("conditional has negative entries")
        sums = arr.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-12):
            raise InvalidDistributionError(
                f"conditional rows sum to {sums}, expected 1 per setting"
            )
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "probs", arr)

    def flat(self) -> np.ndarray:
        """Flattened z-major 16-vector (z*4 + c)."""
        return self.probs.reshape(-1)


def uniform_conditional() -> ConditionalDistribution:
    return ConditionalDistribution(np.full((4, 4), 0.25))


def deterministic_conditionals() -> list[ConditionalDistribution]:
    """The 16 local deterministic behaviours a = f(x), b = g(y).

    Each is indexed by the bit quadruple (a|x=0, a|x=1, b|y=0, b|y=1);
    enumeration order is that 4-bit integer.
    """
    out = []
    for a0, a1, b0, b1 in product((0, 1), repeat=4):
        t = np.zeros((4, 4))
        for z in range(4):
            x, y = z & 1, z >> 1
            a = a1 if x else a0
            b = b1 if y else b0
            t[z, a + 2 * b] = 1.0
        out.append(ConditionalDistribution(t))
    return out


def pr_box() -> ConditionalDistribution:
    """Perfect nonlocal box: a xor b = x and y, uniform marginals (CHSH 4)."""
    t = np.zeros((4, 4))
    for z in range(4):
        want = 1 if z == 3 else 0
        for c in range(4):
            a, b = c & 1, c >> 1
            if (a ^ b) == want:
                t[z, c] = 0.5
    return ConditionalDistribution(t)


def bias_vertices(eps_b: float) -> BiasPolytope:
    """Extreme points of the input-bias polytope at adversarial bias eps_b."""
    if not 0.0 <= eps_b <= 0.5:
        raise ValueError(f"eps_b={eps_b} outside [0, 0.5]")
    p, q = 0.5 + eps_b, 0.5 - eps_b
    rows = [
        (p * p, p * q, p * q, q * q),
        (p * q, q * q, p * p, p * q),
        (p * q, p * p, q * q, p * q),
        (q * q, p * q, p * q, p * p),
    ]
    return BiasPolytope(eps_b, tuple(InputDistribution(r) for r in rows))


# ---------------------------------------------------------------------------
# H-representation of the conditional polytope
# ---------------------------------------------------------------------------

# mu(16) = CG_MAP @ x + CG_OFFSET maps Collins-Gisin coords to the flat
# z-major probability vector.
CG_MAP = np.zeros((16, 8))
CG_OFFSET = np.zeros(16)
for _z in range(4):
    _x, _y = _z & 1, _z >> 1
    _iA, _iB, _iJ = _x, 2 + _y, 4 + _z
    CG_MAP[_z * 4 + 0, _iJ] = 1.0
    CG_MAP[_z * 4 + 1, _iB] = 1.0
    CG_MAP[_z * 4 + 1, _iJ] = -1.0
    CG_MAP[_z * 4 + 2, _iA] = 1.0
    CG_MAP[_z * 4 + 2, _iJ] = -1.0
    CG_MAP[_z * 4 + 3, _iA] = -1.0
    CG_MAP[_z * 4 + 3, _iB] = -1.0
    CG_MAP[_z * 4 + 3, _iJ] = 1.0
    CG_OFFSET[_z * 4 + 3] = 1.0
CG_MAP.flags.writeable = False
CG_OFFSET.flags.writeable = False


def chsh_sign_rows() -> np.ndarray:
    """(4, 16) rows: s-th row gives I_s = sum_z sgn_z E_z over the flat
    probabilities, where the minus sign sits at setting s."""
    rows = np.zeros((4, 16))
    for s in range(4):
        for z in range(4):
            sgn = -1.0 if z == s else 1.0
            for c in range(4):
                a, b = c & 1, c >> 1
                rows[s, z * 4 + c] = sgn * (1.0 if (a ^ b) == 0 else -1.0)
    return rows


_CHSH_ROWS = chsh_sign_rows()
_CHSH_ROWS.flags.writeable = False


def _cg_inequalities(tsirelson: bool):
    """Inequalities a.x <= b over CG coords, as exact Fractions.

    Sixteen non-negativity facets always; with ``tsirelson`` the eight
    sign-variant CHSH expressions bounded by TSIRELSON_BOUND in magnitude.
    """
    rows: list[tuple[list[Fraction], Fraction]] = []

    def vec(entries):
        v = [Fraction(0)] * 8
        for i, cc in entries.items():
            v[i] = Fraction(cc)
        return v

    for z in range(4):
        x, y = z & 1, z >> 1
        iA, iB, iJ = x, 2 + y, 4 + z
        rows.append((vec({iJ: -1}), Fraction(0)))                # P(00|z) >= 0
        rows.append((vec({iJ: 1, iB: -1}), Fraction(0)))         # P(10|z) >= 0
        rows.append((vec({iJ: 1, iA: -1}), Fraction(0)))         # P(01|z) >= 0
        rows.append((vec({iA: 1, iB: 1, iJ: -1}), Fraction(1)))  # P(11|z) >= 0
    if tsirelson:
        # E_z = 4 j_z - 2 pA_x - 2 pB_y + 1 in CG coords
        for s in range(4):
            base = [Fraction(0)] * 8
            const = Fraction(0)
            for z in range(4):
                sgn = -1 if z == s else 1
                x, y = z & 1, z >> 1
                base[4 + z] += 4 * sgn
                base[x] += -2 * sgn
                base[2 + y] += -2 * sgn
                const += sgn
            rows.append((base, TSIRELSON_BOUND - const))
            rows.append(([-c for c in base], TSIRELSON_BOUND + const))
    return rows


@dataclass(frozen=True)
class PolytopeH:
    """H-representation of the conditional polytope over the 16 flat probs.

    ``a_ineq @ mu <= b_ineq`` together with the implicit per-setting
    normalization and non-signaling equalities (honoured exactly by the
    Collins-Gisin parameterization used internally).
    """

    tsirelson: bool
    a_ineq: np.ndarray = field(repr=False)
    b_ineq: np.ndarray = field(repr=False)
    a_eq: np.ndarray = field(repr=False)
    b_eq: np.ndarray = field(repr=False)
    cg_rows: tuple = field(repr=False)


def build_polytope(tsirelson: bool = True) -> PolytopeH:
    """Constraint system for nu(C|Z): normalization + non-negativity +
    non-signaling, optionally the eight CHSH-type Tsirelson bounds."""
    # inequalities over the flat 16-vector: non-negativity (+ Tsirelson)
    a_rows = [-np.eye(16)]
    b_rows = [np.zeros(16)]
    if tsirelson:
        a_rows += [_CHSH_ROWS, -_CHSH_ROWS]
        b_rows += [np.full(4, _FLOAT_TSIRELSON)] * 2
    a_ineq = np.vstack(a_rows)
    b_ineq = np.concatenate(b_rows)

    eq_rows, eq_rhs = [], []
    for z in range(4):
        r = np.zeros(16)
        r[z * 4 : (z + 1) * 4] = 1.0
        eq_rows.append(r)
        eq_rhs.append(1.0)
    # Alice marginal independent of y; Bob marginal independent of x
    for a in range(2):
        for x in range(2):
            r = np.zeros(16)
            for b in range(2):
                c = a + 2 * b
                r[(x + 0) * 4 + c] += 1.0
                r[(x + 2) * 4 + c] -= 1.0
            eq_rows.append(r)
            eq_rhs.append(0.0)
    for b in range(2):
        for y in range(2):
            r = np.zeros(16)
            for a in range(2):
                c = a + 2 * b
                r[(0 + 2 * y) * 4 + c] += 1.0
                r[(1 + 2 * y) * 4 + c] -= 1.0
            eq_rows.append(r)
            eq_rhs.append(0.0)

    h = PolytopeH(
        tsirelson=tsirelson,
        a_ineq=a_ineq,
        b_ineq=b_ineq,
        a_eq=np.array(eq_rows),
        b_eq=np.array(eq_rhs),
        cg_rows=tuple(_cg_inequalities(tsirelson)),
    )
    for arr in (h.a_ineq, h.b_ineq, h.a_eq, h.b_eq):
        arr.flags.writeable = False
    return h


def contains(h: PolytopeH, nu: ConditionalDistribution, tol: float = 0.0) -> bool:
    """True iff every constraint of ``h`` holds within ``tol``."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    mu = nu.flat()
    if np.any(h.a_ineq @ mu - h.b_ineq > tol):
        return False
    return not np.any(np.abs(h.a_eq @ mu - h.b_eq) > tol)


def constraint_violation(h: PolytopeH, nu: ConditionalDistribution) -> float:
    """Largest signed violation over all constraints (<= 0 means inside)."""
    mu = nu.flat()
    v1 = float(np.max(h.a_ineq @ mu - h.b_ineq))
    v2 = float(np.max(np.abs(h.a_eq @ mu - h.b_eq)))
    return max(v1, v2)


def chsh_value(nu: ConditionalDistribution) -> float:
    """CHSH expression I = E00 + E10 + E01 - E11 with
    E_z = sum_ab (-1)^(a xor b) nu(ab|z)."""
    return float(_CHSH_ROWS[3] @ nu.flat())


def chsh_values_all(nu: ConditionalDistribution) -> np.ndarray:
    """All four sign variants (minus position at each setting in turn)."""
    return _CHSH_ROWS @ nu.flat()


# ---------------------------------------------------------------------------
# Vertex enumeration (double description, exact rationals)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VertexList:
    """Extreme points of a conditional polytope."""

    vertices: tuple[ConditionalDistribution, ...]
    dedup_tol: float = 1e-9

    def as_array(self) -> np.ndarray:
        """(n_vertices, 4, 4) stack of nu(c|z) tables."""
        return np.stack([v.probs for v in self.vertices])

    def __len__(self) -> int:
        return len(self.vertices)


def _dd_vertices(ineqs, dim=8):
    """Double description over an inequality list (a, b) meaning a.x <= b.

    Starts from the unit box (which contains the target polytope and whose
    facets are implied by the target's own inequalities) and cuts one
    halfspace at a time, generating new vertices from adjacent crossing
    pairs.  All arithmetic is exact.
    """
    verts: list[tuple[tuple, frozenset]] = []
    for bits in product((0, 1), repeat=dim):
        tight = frozenset(
            (-1 - i) if bits[i] == 0 else (-100 - i) for i in range(dim)
        )
        verts.append((tuple(Fraction(b) for b in bits), tight))

    for idx, (a, b) in enumerate(ineqs):

        def val(v, a=a, b=b):
            return sum(ai * vi for ai, vi in zip(a, v)) - b

        pos, zero, neg = [], [], []
        for v, t in verts:
            s = val(v)
            if s < 0:
                neg.append((v, t))
            elif s == 0:
                zero.append((v, frozenset(t | {idx})))
            else:
                pos.append((v, t))
        if not neg and not zero:
            raise DegenerateConstraintError(
                f"inequality {idx} removes every generator; system infeasible"
            )
        if not pos:
            verts = neg + zero
            continue
        new = []
        for v1, t1 in neg:
            s1 = val(v1)
            for v2, t2 in pos:
                common = t1 & t2
                # combinatorial adjacency: the shared tight set must not be
                # contained in any third generator's tight set
                adjacent = True
                for v3, t3 in verts:
                    if v3 is v1 or v3 is v2:
                        continue
                    if common <= t3:
                        adjacent = False
                        break
                if not adjacent:
                    continue
                s2 = val(v2)
                lam = s2 / (s2 - s1)
                pt = tuple(lam * c1 + (1 - lam) * c2 for c1, c2 in zip(v1, v2))
                new.append((pt, frozenset(common | {idx})))
        merged: dict[tuple, frozenset] = {}
        for v, t in neg + zero + new:
            merged[v] = frozenset(merged.get(v, frozenset()) | t)
        verts = list(merged.items())
    if not verts:
        raise DegenerateConstraintError("empty vertex set")
    return [v for v, _ in verts]


def enumerate_vertices(h: PolytopeH, dedup_tol: float = 1e-9) -> VertexList:
    """All extreme points of ``h`` as conditional distributions.

    Exact rational double description in Collins-Gisin coordinates, then
    conversion to float probability tables with max-norm deduplication.
    """
    raw = _dd_vertices(list(h.cg_rows))
    seen: list[np.ndarray] = []
    out: list[ConditionalDistribution] = []
    for cg in raw:
        x = np.array([float(c) for c in cg])
        mu = CG_MAP @ x + CG_OFFSET
        mu = np.clip(mu, 0.0, None)  # exact zeros may float to -1e-17
        if any(np.max(np.abs(mu - s)) < dedup_tol for s in seen):
            continue
        seen.append(mu)
        out.append(ConditionalDistribution(mu.reshape(4, 4)))
    for v in out:
        if constraint_violation(h, v) > 1e-9:
            raise DegenerateConstraintError(
                "enumerated vertex violates the source constraints"
            )
    return VertexList(tuple(out), dedup_tol)
