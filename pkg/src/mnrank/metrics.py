"""Confusion matrices, the multiclass Matthews correlation coefficient and report tables."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    counts: np.ndarray
    classes: tuple

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def percentages(self) -> np.ndarray:
        return 100.0 * self.counts / max(self.total, 1)


def confusion(true, pred, classes) -> ConfusionMatrix:
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    classes = tuple(int(c) for c in classes)
    if true.shape != pred.shape or true.ndim != 1:
        raise InputError(f"label arrays differ in shape: {true.shape} vs {pred.shape}")
    if true.size == 0:
        raise InputError("no labels to evaluate")
    lookup = {c: i for i, c in enumerate(classes)}
    try:
        ti = np.array([lookup[int(v)] for v in true])
        pi = np.array([lookup[int(v)] for v in pred])
    except KeyError as e:
        raise InputError(f"label {e.args[0]} not in classes {classes}") from None
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    np.add.at(counts, (ti, pi), 1)
    return ConfusionMatrix(counts, classes)


def mcc_from_counts(counts) -> np.ndarray:
    """Generalized MCC for a stack of confusion matrices of shape (..., C, C)."""
    m = np.asarray(counts, dtype=np.float64)
    s = m.sum(axis=(-2, -1))
    c = np.trace(m, axis1=-2, axis2=-1)
    t = m.sum(axis=-1)
    p = m.sum(axis=-2)
    num = c * s - (p * t).sum(axis=-1)
    d = (s * s - (p * p).sum(axis=-1)) * (s * s - (t * t).sum(axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(d > 0, num / np.sqrt(np.where(d > 0, d, 1.0)), 0.0)
    return out


def mcc(cm) -> float:
    counts = cm.counts if isinstance(cm, ConfusionMatrix) else cm
    return float(mcc_from_counts(counts))


# ----------------------------------------------------------------- report


def format_table(cm: ConfusionMatrix, decimals: int = 3) -> list[list[str]]:
    pct = cm.percentages()
    rows = [["True Rank", *(f"Pred {c}" for c in cm.classes)]]
    for c, r in zip(cm.classes, pct):
        rows.append([str(c), *(f"{v:.{decimals}f}" for v in r)])
    return rows


def _aligned(rows) -> str:
    widths = [max(len(r[j]) for r in rows) for j in range(len(rows[0]))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in rows) + "\n"


def render_report(cm: ConfusionMatrix, mcc_value: float, metadata=None, decimals=None):
    """Returns (csv text, aligned text).  Six or more classes get four decimals."""
    if decimals is None:
        decimals = 4 if len(cm.classes) >= 6 else 3
    rows = format_table(cm, decimals)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    w.writerow(["MCC", f"{mcc_value:.6f}"])
    for k in sorted(metadata or {}):
        w.writerow([k, metadata[k]])
    text = ""
    for k in sorted(metadata or {}):
        text += f"{k}: {metadata[k]}\n"
    text += _aligned(rows) + f"MCC = {mcc_value:.4f}\n"
    return buf.getvalue(), text


def report(cm: ConfusionMatrix, mcc_value: float, metadata=None, out_prefix=None, decimals=None):
    csv_text, text = render_report(cm, mcc_value, metadata, decimals)
    if out_prefix is not None:
        Path(f"{out_prefix}.csv").write_text(csv_text, encoding="utf-8")
        Path(f"{out_prefix}.txt").write_text(text, encoding="utf-8")
    return csv_text, text


def mcc_table(results: dict, row_order=None, col_order=("S0 and S5", "S0", "S5")) -> str:
    """Aligned MCC grid: rows are bound sets, columns are sum kinds, blanks where missing."""
    row_order = list(row_order or results)
    rows = [["B", *col_order]]
    for r in row_order:
        cells = results.get(r, {})
        rows.append([r, *(f"{cells[c]:.3f}" if c in cells else "" for c in col_order)])
    return _aligned(rows)
