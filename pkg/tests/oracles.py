"""Brute-force reference implementations shared by the unit and acceptance tests."""
import itertools

import numpy as np

from mnrank.curves import count_points_naive
from mnrank.metrics import mcc_from_counts


def ap_by_enumeration(curve, p):
    n = count_points_naive(curve, p)
    return p - n if curve.is_bad(p) else p + 1 - n


def _mids(v):
    u = np.unique(v)
    return np.concatenate([[-np.inf], (u[:-1] + u[1:]) / 2, [np.inf]])


def best_rectangle_mcc(x, y, ranks, classes):
    """Enumerate every default class and every rectangle (or none) for each other class.

    A point takes the highest rank whose rectangle holds it.  Points are
    grouped by threshold cell and box memberships are matrix products, so
    the full product of boxes is scored without approximation.
    """
    classes = np.asarray(classes)
    C = len(classes)
    tx, ty = _mids(x), _mids(y)
    boxes = [(tx[a], tx[b], ty[c], ty[d]) for a, b in itertools.combinations(range(len(tx)), 2)
             for c, d in itertools.combinations(range(len(ty)), 2)]
    inside = np.array([(x >= b[0]) & (x <= b[1]) & (y >= b[2]) & (y <= b[3]) for b in boxes], dtype=float)
    inside = np.vstack([np.zeros(len(x)), inside])  # row 0: no rectangle
    onehot = (np.asarray(ranks)[:, None] == classes[None, :]).astype(float)
    total = onehot.sum(0)
    A = inside @ onehot  # (n_box, C): true-class counts inside each box
    best = -np.inf
    for d in range(C):
        others = sorted((k for k in range(C) if k != d), reverse=True)
        if len(others) == 1:
            (k,) = others
            cm = np.zeros((len(A), C, C))
            cm[:, :, k] = A
            cm[:, :, d] = total - A
            best = max(best, mcc_from_counts(cm).max())
            continue
        hi, lo = others
        both = np.einsum("in,jn,nc->ijc", inside, inside, onehot)
        cm = np.zeros((len(A), len(A), C, C))
        cm[..., hi] = A[:, None, :]
        cm[..., lo] = A[None, :, :] - both
        cm[..., d] = total - cm[..., hi] - cm[..., lo]
        best = max(best, mcc_from_counts(cm).max())
    return float(best)


def lattice_instance(rng, n_max=200, max_values=7, max_classes=3):
    """Random points on a small lattice so each axis has at most max_values + 1 candidate cuts."""
    n = int(rng.integers(10, n_max + 1))
    C = int(rng.integers(2, max_classes + 1))
    kx, ky = int(rng.integers(2, max_values + 1)), int(rng.integers(2, max_values + 1))
    x = rng.choice(rng.normal(size=kx), n)
    y = rng.choice(rng.normal(size=ky), n)
    r = rng.integers(0, C, n)
    r[:C] = np.arange(C)
    return x, y, r, tuple(range(C))
