"""Weierstrass models over Q and their Frobenius traces a_p."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _pointcount as K
from .errors import ArgumentError, ComputeError, MinimalityError, ValidationError
from .primes import PrimeTable, sieve_primes

NAIVE_THRESHOLD = 4096
# Below this, BSGS may legitimately fail to single out the group order.
MESTRE_SAFE_PRIME = 457


def b_invariants(a1, a2, a3, a4, a6):
    b2 = a1 * a1 + 4 * a2
    b4 = 2 * a4 + a1 * a3
    b6 = a3 * a3 + 4 * a6
    b8 = a1 * a1 * a6 + 4 * a2 * a6 - a1 * a3 * a4 + a2 * a3 * a3 - a4 * a4
    return b2, b4, b6, b8


def c_invariants(ainvs):
    b2, b4, b6, _ = b_invariants(*ainvs)
    return b2 * b2 - 24 * b4, -b2 * b2 * b2 + 36 * b2 * b4 - 216 * b6


def discriminant(curve) -> int:
    """Discriminant of a model, given as a :class:`CurveModel` or an a-invariant 5-tuple."""
    ainvs = curve.ainvs if isinstance(curve, CurveModel) else tuple(curve)
    b2, b4, b6, b8 = b_invariants(*ainvs)
    return -b2 * b2 * b8 - 8 * b4**3 - 27 * b6 * b6 + 9 * b2 * b4 * b6


def _radical_divides(n: int, d: int) -> bool:
    """True if every prime factor of n divides d."""
    while n > 1:
        g = math.gcd(n, d)
        if g == 1:
            return False
        while n % g == 0:
            n //= g
    return True


@dataclass(frozen=True)
class CurveModel:
    a1: int
    a2: int
    a3: int
    a4: int
    a6: int
    conductor: int
    rank: int = 0
    label: str | None = None
    discriminant: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("a1", "a2", "a3", "a4", "a6", "conductor", "rank"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise ValidationError(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        disc = discriminant(self.ainvs)
        object.__setattr__(self, "discriminant", disc)
        if disc == 0:
            raise ValidationError(f"singular model {self.ainvs}")
        if self.conductor < 1:
            raise ValidationError(f"conductor must be positive, got {self.conductor}")
        if self.rank < 0:
            raise ValidationError(f"rank must be non-negative, got {self.rank}")
        if not _radical_divides(self.conductor, abs(disc)):
            raise ValidationError(
                f"conductor {self.conductor} has a prime factor not dividing disc {disc}"
            )

    @property
    def ainvs(self) -> tuple[int, int, int, int, int]:
        return (self.a1, self.a2, self.a3, self.a4, self.a6)

    def is_bad(self, p: int) -> bool:
        return self.conductor % p == 0


@dataclass(frozen=True)
class ApVector:
    """Frobenius traces for every prime below ``prime_limit``, ascending."""

    prime_limit: int
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.int16)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    def __eq__(self, other):
        if not isinstance(other, ApVector):
            return NotImplemented
        return self.prime_limit == other.prime_limit and np.array_equal(self.values, other.values)

    __hash__ = None


# ----------------------------------------------------------------- oracles


def count_points_naive(curve: CurveModel, p: int) -> int:
    """#E(F_p) by enumeration, point at infinity included.

    At a prime of bad reduction only the smooth points are counted (the
    unique singular point is dropped).  Pure Python; O(p) per call.
    """
    a1, a2, a3, a4, a6 = (a % p for a in curve.ainvs)
    affine = 0
    if p == 2:
        for x in range(2):
            for y in range(2):
                if (y * y + a1 * x * y + a3 * y - x**3 - a2 * x * x - a4 * x - a6) % 2 == 0:
                    affine += 1
    else:
        roots = [0] * p
        for u in range(p):
            roots[u * u % p] += 1
        for x in range(p):
            h = a1 * x + a3
            g = x * x * x + a2 * x * x + a4 * x + a6
            # y^2 + h y = g  <=>  (2y + h)^2 = h^2 + 4g
            affine += roots[(h * h + 4 * g) % p]
    singular = curve.discriminant % p == 0
    return affine + 1 - (1 if singular else 0)


# ---------------------------------------------------------- single prime


def _residues(curve: CurveModel, p: int):
    c4, c6 = c_invariants(curve.ainvs)
    A = (-27 * c4) % p
    B = (-54 * c6) % p
    return c4 % p, c6 % p, A, B


def ap_good_prime(curve: CurveModel, p: int, naive_threshold: int = NAIVE_THRESHOLD) -> int:
    """a_p = p + 1 - #E(F_p) for a prime of good reduction."""
    if p >= 2**31 or p < 2:
        raise ArgumentError(f"prime {p} out of range")
    if curve.is_bad(p):
        raise ArgumentError(f"{p} divides the conductor {curve.conductor}")
    if curve.discriminant % p == 0:
        raise MinimalityError(
            f"model {curve.ainvs} is singular mod {p} although {p} does not divide "
            f"the conductor (non-minimal model or wrong conductor)",
            prime=p,
        )
    if p <= 3:
        return p + 1 - count_points_naive(curve, p)
    _, _, A, B = _residues(curve, p)
    if p < naive_threshold:
        return int(K.charsum_trace(p, A, B, K.quadratic_character_table(p)))
    return ap_bsgs(curve, p)


def ap_bsgs(curve: CurveModel, p: int) -> int:
    """a_p at a good prime p >= 5 by baby-step/giant-step, regardless of size."""
    if p < 5:
        raise ArgumentError("BSGS path needs p >= 5")
    _, _, A, B = _residues(curve, p)
    out = np.zeros(1, np.int64)
    ok = np.zeros(1, np.bool_)
    if p < K.FLOAT_EXACT_LIMIT:
        K.bsgs_lanes(p, np.array([A], np.int64), np.array([B], np.int64), out, ok)
    if ok[0]:
        return int(out[0])
    t, good = K.resolve_trace(p, A, B)
    if good:
        return int(t)
    if p <= MESTRE_SAFE_PRIME:
        return p + 1 - count_points_naive(curve, p)
    raise ComputeError(f"could not isolate #E(F_{p}) for {curve.ainvs}", prime=p)


def ap_bad_prime(curve: CurveModel, p: int) -> int:
    """a_p = p - #E_ns(F_p) at a prime dividing the conductor: +1, -1 or 0."""
    if not curve.is_bad(p):
        raise ArgumentError(f"{p} does not divide the conductor {curve.conductor}")
    a = p - count_points_naive(curve, p)
    if abs(a) > 1:
        raise MinimalityError(
            f"a_{p} = {a} at a bad prime: model {curve.ainvs} is not minimal at {p}", prime=p
        )
    return a


# ---------------------------------------------------------------- batches

_N_INTS = 8  # a1 a2 a3 a4 a6 c4 c6 disc


def _limbs(values_per_curve):
    """Base-2**30 limbs and signs for a list of integer 8-tuples."""
    width = 1
    for vals in values_per_curve:
        for v in vals:
            width = max(width, -(-abs(v).bit_length() // K.LIMB_BITS))
    n = len(values_per_curve)
    lim = np.zeros((n, _N_INTS, width), np.int64)
    sg = np.ones((n, _N_INTS), np.int64)
    mask = (1 << K.LIMB_BITS) - 1
    for c, vals in enumerate(values_per_curve):
        for i, v in enumerate(vals):
            if v < 0:
                sg[c, i] = -1
                v = -v
            j = 0
            while v:
                lim[c, i, j] = v & mask
                v >>= K.LIMB_BITS
                j += 1
    return lim, sg


@lru_cache(maxsize=4)
def _character_tables(threshold: int):
    small = sieve_primes(max(threshold, 3)).primes
    return small, *K.build_character_tables(small)


def _trace_block(curves, primes, naive_threshold):
    vals = [(*c.ainvs, *c_invariants(c.ainvs), c.discriminant) for c in curves]
    lim, sg = _limbs(vals)
    conductors = np.array([c.conductor for c in curves], np.int64)
    small, chi_flat, chi_off = _character_tables(naive_threshold)
    n_chi = int(np.searchsorted(primes, small[-1], side="right")) if len(small) else 0
    if n_chi and not np.array_equal(primes[:n_chi], small[:n_chi]):
        raise ArgumentError("prime list must start at 2 and be consecutive")
    out = np.zeros((len(curves), len(primes)), np.int16)
    err = np.zeros(len(curves), np.int64)
    err_p = np.zeros(len(curves), np.int64)
    K.trace_matrix(
        primes, lim, sg, conductors, chi_flat, chi_off, n_chi, naive_threshold, out, err, err_p
    )
    for c in np.flatnonzero(err):
        _raise_kernel_error(curves[c], int(err[c]), int(err_p[c]))
    return out


def _raise_kernel_error(curve, code, p):
    name = curve.label or str(curve.ainvs)
    if code == K.E_SINGULAR_GOOD:
        raise MinimalityError(
            f"{name}: singular mod {p} but {p} does not divide the conductor", prime=p
        )
    if code == K.E_SMOOTH_BAD:
        raise MinimalityError(f"{name}: {p} divides the conductor but reduction is smooth", prime=p)
    raise ComputeError(f"{name}: could not isolate #E(F_{p})", prime=p)


def _check_hasse_range(primes):
    # int16 storage needs 2 sqrt(p) < 2**15
    if len(primes) and 2 * math.isqrt(int(primes[-1])) + 1 >= 2**15:
        raise ArgumentError("prime limit too large for 16-bit a_p storage")


def ap_matrix(curves, table: PrimeTable, jobs: int = 1, chunk: int = 256,
              naive_threshold: int = NAIVE_THRESHOLD) -> np.ndarray:
    """Traces for many curves: an (n_curves, n_primes) int16 array, catalog order."""
    curves = list(curves)
    primes = np.ascontiguousarray(table.primes, dtype=np.int64)
    _check_hasse_range(primes)
    if not curves:
        return np.zeros((0, len(primes)), np.int16)
    blocks = [curves[i : i + chunk] for i in range(0, len(curves), chunk)]
    if jobs <= 1 or len(blocks) == 1:
        parts = [_trace_block(b, primes, naive_threshold) for b in blocks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_trace_block, blocks, [primes] * len(blocks),
                                  [naive_threshold] * len(blocks)))
    return np.concatenate(parts, axis=0)


def ap_vector(curve: CurveModel, table: PrimeTable, naive_threshold: int = NAIVE_THRESHOLD) -> ApVector:
    return ApVector(table.limit, ap_matrix([curve], table, naive_threshold=naive_threshold)[0])


def ap_vectors(curves, table: PrimeTable, jobs: int = 1) -> list[ApVector]:
    return [ApVector(table.limit, row) for row in ap_matrix(curves, table, jobs=jobs)]
