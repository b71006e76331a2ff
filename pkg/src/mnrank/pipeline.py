"""Glue shared by the command line and the experiment tests."""
from __future__ import annotations

import math

import numpy as np

from .curves import ap_matrix
from .dataset import ApCache, CurveCatalog
from .errors import ConfigurationError, ValidationError
from .models import Dataset, LearnedSum, SumMlp, SumMlpConfig, evaluate_mcc, normalize_traces, train
from .primes import sieve_primes
from .sums import DEFAULT_BOUNDS, FeatureTable, feature_columns, sum_matrix


def compute_ap(catalog: CurveCatalog, limit: int = 100000, jobs: int = 1) -> np.ndarray:
    return ap_matrix(catalog.curves, sieve_primes(limit), jobs=jobs)


def feature_table(catalog: CurveCatalog, traces, prime_limit: int, bounds=DEFAULT_BOUNDS) -> FeatureTable:
    """Sums at every bound plus log10 N for each curve, in catalog order."""
    traces = np.asarray(traces)
    if traces.shape[0] != len(catalog):
        raise ValidationError(f"{traces.shape[0]} trace rows for {len(catalog)} curves")
    primes = sieve_primes(prime_limit).primes
    if traces.shape[1] != len(primes):
        raise ValidationError(f"trace rows have {traces.shape[1]} entries, expected {len(primes)}")
    S0, S5 = sum_matrix(traces, catalog.conductors, primes, prime_limit, bounds)
    log10N = np.log10(catalog.conductors.astype(np.float64))
    values = np.column_stack([log10N, S0, S5])
    return FeatureTable(catalog.labels, catalog.ranks, feature_columns(bounds), values)


def input_columns(kinds, bounds) -> list[str]:
    """log10N followed by the chosen sums, e.g. kinds=('s0','s5'), bounds=(1000, 100000)."""
    cols = ["log10N"]
    for k in kinds:
        if k not in ("s0", "s5"):
            raise ConfigurationError(f"unknown sum kind {k!r}")
        cols.extend(f"{k}@{int(b)}" for b in bounds)
    return cols


def keep_classes(idx, ranks, classes):
    """Drop ordinals whose rank lies outside the class set."""
    idx = np.asarray(idx, dtype=np.int64)
    return idx[np.isin(np.asarray(ranks)[idx], list(classes))]


def sum_dataset(table: FeatureTable, idx, columns) -> Dataset:
    return Dataset((table.select(columns)[idx],), table.ranks[idx])


def trace_dataset(cache: ApCache, catalog: CurveCatalog, idx) -> Dataset:
    primes = sieve_primes(cache.prime_limit).primes
    a = normalize_traces(cache.values[idx], primes)
    logN = np.log10(catalog.conductors[idx].astype(np.float64)).astype(np.float32)
    return Dataset((a, logN), catalog.ranks[idx])


def run_sum_mlp(table: FeatureTable, parts, columns, config: SumMlpConfig, log_path=None):
    """Train on parts[0], select on parts[1]; returns (model, result, {partition: mcc})."""
    cfg = SumMlpConfig(**{**config.__dict__, "columns": tuple(columns)})
    tr, va, te = (keep_classes(p, table.ranks, cfg.classes) for p in parts)
    model = SumMlp(cfg)
    res = train(model, sum_dataset(table, tr, columns), sum_dataset(table, va, columns), log_path)
    scores = {"validation": evaluate_mcc(model, sum_dataset(table, va, columns))}
    if len(te):
        scores["test"] = evaluate_mcc(model, sum_dataset(table, te, columns))
    return model, res, scores


def run_learned_sum(cache: ApCache, catalog: CurveCatalog, parts, config, log_path=None):
    tr, va, te = (keep_classes(p, catalog.ranks, config.classes) for p in parts)
    if config.prime_limit != cache.prime_limit:
        raise ConfigurationError(f"model prime limit {config.prime_limit} differs from cache {cache.prime_limit}")
    model = LearnedSum(config)
    res = train(model, trace_dataset(cache, catalog, tr), trace_dataset(cache, catalog, va), log_path)
    scores = {"validation": evaluate_mcc(model, trace_dataset(cache, catalog, va))}
    if len(te):
        scores["test"] = evaluate_mcc(model, trace_dataset(cache, catalog, te))
    return model, res, scores


def conductor_window(table: FeatureTable, lo=None, hi=None) -> np.ndarray:
    """Ordinals with lo <= N <= hi, recovering N from the log10N column."""
    N = np.rint(10.0 ** table.values[:, 0])
    m = np.ones(len(N), dtype=bool)
    if lo is not None:
        m &= N >= lo
    if hi is not None:
        m &= N <= hi
    return np.flatnonzero(m)


def parse_int_list(text) -> list[int]:
    """'1000,100000' or '0-4' or 'all' (every default bound)."""
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    text = str(text).strip()
    if text == "all":
        return list(DEFAULT_BOUNDS)
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(float(part)) if "e" in part.lower() else int(part))
    return out


def parse_number(text) -> int:
    v = float(text)
    if not math.isfinite(v):
        raise ConfigurationError(f"not a finite number: {text}")
    return int(v)
