"""Mestre-Nagao sums S0(B), S5(B) and the classifier feature rows built from them."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .curves import ApVector, CurveModel
from .errors import BoundError, DataCorruptionError, InputError, ParseError
from .primes import PrimeTable

DEFAULT_BOUNDS = (1000, 5000, 10000, 20000, 30000, 40000, 50000, 100000)


@dataclass(frozen=True)
class SumFeatures:
    log10_conductor: float
    s0: dict
    s5: dict
    bounds: tuple

    def row(self, columns) -> list[float]:
        """Values for feature names such as ``log10N``, ``s0@1000``, ``s5@100000``."""
        out = []
        for name in columns:
            if name == "log10N":
                out.append(self.log10_conductor)
                continue
            kind, _, b = name.partition("@")
            out.append({"s0": self.s0, "s5": self.s5}[kind][int(b)])
        return out


def feature_columns(bounds=DEFAULT_BOUNDS, kinds=("s0", "s5")) -> list[str]:
    """Column names in canonical order: log10N, then every S0 bound, then every S5 bound."""
    cols = ["log10N"]
    for k in kinds:
        cols.extend(f"{k}@{b}" for b in bounds)
    return cols


def _prime_count(ap_limit: int, primes: np.ndarray, B: int) -> int:
    if B < 2:
        raise BoundError(f"bound must be at least 2, got {B}")
    if B > ap_limit or (B == ap_limit and B in primes):
        raise BoundError(f"bound {B} exceeds the a_p prime limit {ap_limit}")
    return int(np.searchsorted(primes, B, side="right"))


def _terms(values, conductors, primes):
    """Per-prime summands of S0 (before the 1/log B factor) and S5.

    values: (n, k) traces, conductors: (n,), primes: (k,).
    """
    a = np.asarray(values, dtype=np.float64)
    p = primes.astype(np.float64)
    bad = (np.asarray(conductors, dtype=np.int64)[:, None] % primes[None, :]) == 0
    arg = (p + 1.0 - a) / p
    if np.any(arg[~bad] <= 0):
        raise DataCorruptionError("p + 1 - a_p <= 0 at a good prime (Hasse bound violated)")
    t0 = np.where(bad, 0.0, a * np.log(p) / p)
    with np.errstate(divide="ignore", invalid="ignore"):
        good5 = np.log(np.where(bad, 1.0, arg))
    t5 = np.where(bad, np.log(1.5 * (p - 1.0) / p), good5)
    return t0, t5


def _primes_for(ap: ApVector, table: PrimeTable) -> np.ndarray:
    primes = table.primes[: len(ap.values)]
    if len(primes) != len(ap.values) or (len(primes) and primes[-1] >= ap.prime_limit):
        raise BoundError("prime table does not cover the a_p vector")
    return primes


def s0(ap: ApVector, curve: CurveModel, table: PrimeTable, B: int) -> float:
    primes = _primes_for(ap, table)
    n = _prime_count(ap.prime_limit, primes, B)
    t0, _ = _terms(ap.values[None, :n], [curve.conductor], primes[:n])
    total = np.cumsum(t0[0])[-1] if n else 0.0
    return float(total / math.log(B))


def s5(ap: ApVector, curve: CurveModel, table: PrimeTable, B: int) -> float:
    primes = _primes_for(ap, table)
    n = _prime_count(ap.prime_limit, primes, B)
    _, t5 = _terms(ap.values[None, :n], [curve.conductor], primes[:n])
    return float(np.cumsum(t5[0])[-1]) if n else 0.0


def sum_matrix(values, conductors, primes, prime_limit, bounds=DEFAULT_BOUNDS):
    """S0 and S5 at every bound for a batch of curves.

    Returns two (n_curves, n_bounds) arrays.  Partial sums run in ascending
    prime order, so each entry equals the one-curve functions bit for bit.
    """
    bounds = list(bounds)
    if sorted(bounds) != bounds:
        raise BoundError("bounds must be ascending")
    primes = np.asarray(primes, dtype=np.int64)
    values = np.asarray(values)
    counts = [_prime_count(prime_limit, primes, B) for B in bounds]
    n = max(counts) if counts else 0
    t0, t5 = _terms(values[:, :n], conductors, primes[:n])
    c0 = np.cumsum(t0, axis=1)
    c5 = np.cumsum(t5, axis=1)
    S0 = np.zeros((len(values), len(bounds)))
    S5 = np.zeros((len(values), len(bounds)))
    for j, (B, k) in enumerate(zip(bounds, counts)):
        if k:
            S0[:, j] = c0[:, k - 1] / math.log(B)
            S5[:, j] = c5[:, k - 1]
    return S0, S5


def features(ap: ApVector, curve: CurveModel, table: PrimeTable, bounds=DEFAULT_BOUNDS) -> SumFeatures:
    """All requested sums from one pass of running partial sums."""
    primes = _primes_for(ap, table)
    S0, S5 = sum_matrix(ap.values[None, :], [curve.conductor], primes, ap.prime_limit, bounds)
    bounds = tuple(bounds)
    return SumFeatures(
        math.log10(curve.conductor),
        {B: float(v) for B, v in zip(bounds, S0[0])},
        {B: float(v) for B, v in zip(bounds, S5[0])},
        bounds,
    )


def estimate_rank_slope(f: SumFeatures, B1: int, B2: int) -> float:
    """Slope of S5 against log log B between two bounds, a crude rank estimate."""
    if B1 not in f.s5 or B2 not in f.s5:
        raise KeyError(f"bounds {B1}, {B2} not both present in {sorted(f.s5)}")
    if not B1 < B2:
        raise BoundError("need B1 < B2")
    return (f.s5[B2] - f.s5[B1]) / (math.log(math.log(B2)) - math.log(math.log(B1)))


# ----------------------------------------------------------------- CSV


def write_features_csv(path, labels, log10N, ranks, S0, S5, bounds):
    cols = feature_columns(bounds)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "log10N", "rank", *cols[1:]])
        for i in range(len(labels)):
            vals = [log10N[i], *S0[i], *S5[i]]
            w.writerow([labels[i], f"{vals[0]:.17g}", int(ranks[i]), *(f"{v:.17g}" for v in vals[1:])])


@dataclass
class FeatureTable:
    """Feature CSV contents: one row per curve, columns keyed by name."""

    labels: list
    ranks: np.ndarray
    columns: list
    values: np.ndarray  # (n, len(columns)), first column log10N

    def select(self, names) -> np.ndarray:
        idx = []
        for n in names:
            if n not in self.columns:
                raise InputError(f"feature column {n!r} missing; available: {self.columns}")
            idx.append(self.columns.index(n))
        return self.values[:, idx]

    def subset(self, rows) -> "FeatureTable":
        rows = np.asarray(rows, dtype=np.int64)
        return FeatureTable([self.labels[i] for i in rows], self.ranks[rows], self.columns, self.values[rows])

    def __len__(self):
        return len(self.labels)


def read_features_csv(path) -> FeatureTable:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:3] != ["label", "log10N", "rank"]:
        raise ParseError("feature CSV must start with label,log10N,rank", line=1)
    header = rows[0]
    columns = ["log10N", *header[3:]]
    labels, ranks, vals = [], [], []
    for ln, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(r)}", line=ln)
        try:
            ranks.append(int(r[2]))
            vals.append([float(r[1]), *map(float, r[3:])])
        except ValueError as e:
            raise ParseError(str(e), line=ln) from None
        labels.append(r[0])
    values = np.array(vals, dtype=np.float64).reshape(len(labels), len(columns))
    return FeatureTable(labels, np.array(ranks, dtype=np.int64), columns, values)
