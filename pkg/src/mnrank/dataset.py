"""Curve catalogs, reproducible train/validation/test splits, class weights and a_p caches."""
from __future__ import annotations

import csv
import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .curves import ApVector, CurveModel
from .errors import ConfigurationError, FormatError, ParseError, ValidationError
from .primes import sieve_primes

CSV_FIELDS = ("label", "a1", "a2", "a3", "a4", "a6", "conductor", "rank")
DEFAULT_CLASSES = tuple(range(6))
DATA_DIR = Path(__file__).with_name("data")


def bundled(name: str) -> Path:
    """Path of a catalog shipped with the package (``curves_sample.csv``, ``curves_desk.csv``)."""
    return DATA_DIR / name


@dataclass
class CurveCatalog:
    curves: list
    source: str = ""
    conductor_range: tuple = (1, math.inf)

    def __len__(self):
        return len(self.curves)

    def __iter__(self):
        return iter(self.curves)

    def __getitem__(self, i):
        return self.curves[i]

    @property
    def conductors(self) -> np.ndarray:
        return np.array([c.conductor for c in self.curves], dtype=np.int64)

    @property
    def ranks(self) -> np.ndarray:
        return np.array([c.rank for c in self.curves], dtype=np.int64)

    @property
    def labels(self) -> list:
        return [c.label if c.label is not None else str(i) for i, c in enumerate(self.curves)]

    def subset(self, idx) -> "CurveCatalog":
        return CurveCatalog([self.curves[int(i)] for i in idx], self.source, self.conductor_range)

    def where(self, mask) -> "CurveCatalog":
        return self.subset(np.flatnonzero(mask))


def load_catalog(path, classes=DEFAULT_CLASSES, conductor_range=None) -> CurveCatalog:
    """Read ``label,a1,a2,a3,a4,a6,conductor,rank`` rows; the header line is optional."""
    classes = set(classes)
    curves = []
    with open(path, newline="", encoding="utf-8") as fh:
        for ln, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if ln == 1 and row[0].strip().lower() == "label":
                continue
            if len(row) != len(CSV_FIELDS):
                raise ParseError(f"expected {len(CSV_FIELDS)} fields, got {len(row)}", line=ln)
            try:
                ints = [int(v) for v in row[1:]]
            except ValueError as e:
                raise ParseError(f"non-integer field: {e}", line=ln) from None
            try:
                c = CurveModel(*ints, label=row[0].strip() or None)
            except ValidationError as e:
                raise ValidationError(f"line {ln}: {e}") from None
            if c.rank not in classes:
                raise ValidationError(f"line {ln}: rank {c.rank} outside class set {sorted(classes)}")
            if conductor_range is not None and not conductor_range[0] <= c.conductor <= conductor_range[1]:
                raise ValidationError(f"line {ln}: conductor {c.conductor} outside {conductor_range}")
            curves.append(c)
    if conductor_range is None:
        N = [c.conductor for c in curves]
        conductor_range = (min(N), max(N)) if N else (1, 1)
    return CurveCatalog(curves, str(path), tuple(conductor_range))


def write_catalog(path, catalog):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for lab, c in zip(catalog.labels, catalog):
            w.writerow([lab, *c.ainvs, c.conductor, c.rank])


# ------------------------------------------------------------------ splits

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """The splitmix64 generator: state += golden gamma, then two xor-shift-multiply rounds."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)


def shuffled(n: int, seed: int) -> np.ndarray:
    """Fisher-Yates permutation of range(n): for i = n-1..1 swap i with next() % (i+1)."""
    perm = list(range(n))
    rng = SplitMix64(seed)
    for i in range(n - 1, 0, -1):
        j = rng.next() % (i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return np.array(perm, dtype=np.int64)


@dataclass(frozen=True)
class SplitSpec:
    """How to partition a catalog.

    ``top_range``: train/validation from conductors in ``train_range``,
    test from ``test_range``; both intervals are half-open ``(lo, hi]``.
    ``uniform``: shuffle the whole catalog and cut it by ``fractions``.
    """

    mode: str = "uniform"
    fractions: tuple = (0.6, 0.2, 0.2)
    train_range: tuple = (0, 10**8)
    test_range: tuple = (10**8, 10**9)
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("uniform", "top_range"):
            raise ConfigurationError(f"unknown split mode {self.mode!r}")
        if len(self.fractions) != 3 or min(self.fractions) < 0 or abs(sum(self.fractions) - 1) > 1e-9:
            raise ConfigurationError(f"fractions must be three non-negative numbers summing to 1: {self.fractions}")
        if self.mode == "top_range":
            (a, b), (c, d) = self.train_range, self.test_range
            if not (a < b and c < d):
                raise ConfigurationError("empty conductor interval")
            if max(a, c) < min(b, d):
                raise ConfigurationError(f"train range {self.train_range} overlaps test range {self.test_range}")
            if not 0 <= self.val_fraction < 1:
                raise ConfigurationError("val_fraction must be in [0, 1)")

    def to_json(self) -> dict:
        d = {"mode": self.mode, "seed": self.seed}
        if self.mode == "uniform":
            d["fractions"] = list(self.fractions)
        else:
            d.update(train_range=list(self.train_range), test_range=list(self.test_range),
                     val_fraction=self.val_fraction)
        return d


def _cut(n, f):
    return int(math.floor(n * f + 1e-9))


def split_indices(catalog_or_conductors, spec: SplitSpec):
    """Ordinals of the (train, validation, test) partitions, each ascending."""
    if isinstance(catalog_or_conductors, CurveCatalog):
        N = catalog_or_conductors.conductors
    else:
        N = np.asarray(catalog_or_conductors, dtype=np.int64)
    if spec.mode == "uniform":
        perm = shuffled(len(N), spec.seed)
        n_tr = _cut(len(N), spec.fractions[0])
        n_va = _cut(len(N), spec.fractions[1])
        parts = perm[:n_tr], perm[n_tr : n_tr + n_va], perm[n_tr + n_va :]
    else:
        lo, hi = spec.train_range
        pool = np.flatnonzero((N > lo) & (N <= hi))
        lo, hi = spec.test_range
        test = np.flatnonzero((N > lo) & (N <= hi))
        perm = pool[shuffled(len(pool), spec.seed)]
        n_va = _cut(len(pool), spec.val_fraction)
        parts = perm[n_va:], perm[:n_va], test
    for name, part in zip(("train", "validation", "test"), parts):
        if len(part) == 0:
            raise ConfigurationError(f"{name} partition is empty")
    return tuple(np.sort(p) for p in parts)


def split(catalog: CurveCatalog, spec: SplitSpec):
    return tuple(catalog.subset(p) for p in split_indices(catalog, spec))


def write_split_manifest(path, spec: SplitSpec, parts, source=""):
    doc = {
        "source": source,
        "spec": spec.to_json(),
        "train": [int(i) for i in parts[0]],
        "validation": [int(i) for i in parts[1]],
        "test": [int(i) for i in parts[2]],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def read_split_manifest(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        parts = tuple(np.array(doc[k], dtype=np.int64) for k in ("train", "validation", "test"))
    except (ValueError, KeyError) as e:
        raise FormatError(f"bad split manifest {path}: {e}") from None
    return parts, doc


# ----------------------------------------------------------- class weights


@dataclass(frozen=True)
class ClassWeights:
    weights: dict = field(default_factory=dict)

    def vector(self, classes) -> np.ndarray:
        return np.array([self.weights[c] for c in classes], dtype=np.float64)


def class_weights(ranks, classes) -> ClassWeights:
    """Inverse relative frequency, scaled so that sum_r freq(r) * w(r) = 1."""
    if isinstance(ranks, CurveCatalog):
        ranks = ranks.ranks
    ranks = np.asarray(ranks)
    classes = list(classes)
    counts = np.array([np.sum(ranks == c) for c in classes], dtype=np.float64)
    missing = [c for c, n in zip(classes, counts) if n == 0]
    if missing:
        raise ConfigurationError(f"classes {missing} absent from the training data")
    freq = counts / len(ranks) if len(ranks) else counts
    w = 1.0 / (len(classes) * freq)
    return ClassWeights({c: float(v) for c, v in zip(classes, w)})


# ------------------------------------------------------------ a_p caches

APV_MAGIC = b"APV1"
APV_VERSION = 1
_HEADER = struct.Struct("<4sHIIQ")


def write_ap_cache(path, vectors, prime_limit=None):
    """Write a (n_curves, n_primes) int16 matrix, or a list of ApVector, to an APV1 file."""
    if len(vectors) and isinstance(vectors[0], ApVector):
        prime_limit = vectors[0].prime_limit
        if any(v.prime_limit != prime_limit for v in vectors):
            raise FormatError("vectors have different prime limits")
        mat = np.stack([v.values for v in vectors])
    else:
        mat = np.asarray(vectors, dtype=np.int16)
        if mat.ndim != 2:
            raise FormatError("expected a 2-d matrix of traces")
    if prime_limit is None:
        raise FormatError("prime_limit required")
    mat = np.ascontiguousarray(mat, dtype="<i2")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(APV_MAGIC, APV_VERSION, prime_limit, mat.shape[1], mat.shape[0]))
        fh.write(mat.tobytes())
    os.replace(tmp, path)


@dataclass
class ApCache:
    prime_limit: int
    values: np.ndarray  # memory-mapped (n_curves, n_primes) little-endian int16

    def __len__(self):
        return self.values.shape[0]

    def vector(self, i) -> ApVector:
        return ApVector(self.prime_limit, np.array(self.values[i]))


def read_ap_cache(path, catalog=None) -> ApCache:
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, limit, n_primes, n_curves = _HEADER.unpack(head)
    if magic != APV_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != APV_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if size != _HEADER.size + 2 * n_primes * n_curves:
        raise FormatError(f"{path}: size {size} does not match {n_curves} x {n_primes} header")
    if limit >= 2 and len(sieve_primes(limit)) != n_primes:
        raise FormatError(f"{path}: {n_primes} primes is inconsistent with limit {limit}")
    if catalog is not None and len(catalog) != n_curves:
        raise ValidationError(f"cache holds {n_curves} curves, catalog has {len(catalog)}")
    if n_curves * n_primes == 0:
        vals = np.zeros((n_curves, n_primes), dtype="<i2")
    else:
        vals = np.memmap(path, dtype="<i2", mode="r", offset=_HEADER.size, shape=(n_curves, n_primes))
    return ApCache(limit, vals)

