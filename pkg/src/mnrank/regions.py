"""MCC-optimal axis-aligned rectangle rules in a two-sum plane.

Each non-default rank may own one closed rectangle.  A point takes the
highest rank whose rectangle contains it and falls back to the default
class otherwise.  Thresholds are restricted to midpoints between distinct
sorted coordinates plus -inf and +inf, so the search space is finite.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError
from .metrics import mcc_from_counts
from .models import predict

EXHAUSTIVE_LIMIT = 3_000_000


@dataclass(frozen=True)
class SumPointCloud:
    x: np.ndarray
    y: np.ndarray
    ranks: np.ndarray
    conductor_range: tuple = (None, None)
    labels: list | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        r = np.asarray(self.ranks, dtype=np.int64)
        if not (x.shape == y.shape == r.shape and x.ndim == 1):
            raise InputError("x, y and ranks must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InputError("point coordinates must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "ranks", r)

    def __len__(self):
        return len(self.x)


@dataclass
class RectangleRuleSet:
    """rects maps rank -> (x_lo, x_hi, y_lo, y_hi); ranks without an entry own no rectangle."""

    classes: tuple
    default_class: int
    rects: dict = field(default_factory=dict)

    def __post_init__(self):
        self.classes = tuple(sorted(int(c) for c in self.classes))
        if self.default_class not in self.classes:
            raise ConfigurationError(f"default class {self.default_class} not in {self.classes}")
        for k, (a, b, c, d) in self.rects.items():
            if k not in self.classes or k == self.default_class:
                raise ConfigurationError(f"rectangle for rank {k} not allowed")
            if not (a <= b and c <= d):
                raise ConfigurationError(f"rectangle for rank {k} has lo > hi")

    @property
    def priority(self) -> tuple:
        return tuple(sorted(self.classes, reverse=True))

    def classify(self, point) -> int:
        x, y = point
        for k in self.priority:
            r = self.rects.get(k)
            if r is not None and r[0] <= x <= r[1] and r[2] <= y <= r[3]:
                return k
        return self.default_class

    def classify_many(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        out = np.full(x.shape, self.default_class, dtype=np.int64)
        done = np.zeros(x.shape, dtype=bool)
        for k in self.priority:
            r = self.rects.get(k)
            if r is None:
                continue
            inside = ~done & (x >= r[0]) & (x <= r[1]) & (y >= r[2]) & (y <= r[3])
            out[inside] = k
            done |= inside
        return out

    def to_json(self) -> dict:
        enc = lambda v: v if math.isfinite(v) else ("inf" if v > 0 else "-inf")
        return {
            "classes": list(self.classes),
            "default_class": self.default_class,
            "priority": list(self.priority),
            "rects": {str(k): [enc(float(v)) for v in r] for k, r in sorted(self.rects.items())},
        }

    @classmethod
    def from_json(cls, d) -> "RectangleRuleSet":
        dec = lambda v: float(v)
        return cls(tuple(d["classes"]), int(d["default_class"]),
                   {int(k): tuple(dec(v) for v in r) for k, r in d["rects"].items()})


def save_rules(path, rules: RectangleRuleSet, extra=None):
    doc = {"rules": rules.to_json(), **(extra or {})}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_rules(path) -> RectangleRuleSet:
    with open(path, encoding="utf-8") as fh:
        return RectangleRuleSet.from_json(json.load(fh)["rules"])


def classify(rules: RectangleRuleSet, point) -> int:
    return rules.classify(point)


# ------------------------------------------------------------ candidates


def candidate_thresholds(v) -> np.ndarray:
    """-inf, the midpoints between consecutive distinct values, +inf."""
    u = np.unique(np.asarray(v, dtype=np.float64))
    return np.concatenate([[-np.inf], (u[:-1] + u[1:]) / 2.0, [np.inf]])


def _cells(v, t):
    # cell i lies between t[i] and t[i+1]; no point sits on a threshold
    return np.searchsorted(t, v) - 1


class _Problem:
    def __init__(self, cloud, classes):
        self.classes = tuple(sorted(int(c) for c in classes))
        present = set(np.unique(cloud.ranks).tolist())
        if not present <= set(self.classes):
            raise InputError(f"cloud ranks {sorted(present)} not within classes {self.classes}")
        if len(present) < 2:
            raise ConfigurationError("need at least two ranks present to fit rectangles")
        self.C = len(self.classes)
        self.tx = candidate_thresholds(cloud.x)
        self.ty = candidate_thresholds(cloud.y)
        self.cx = _cells(cloud.x, self.tx)
        self.cy = _cells(cloud.y, self.ty)
        self.true = np.searchsorted(np.array(self.classes), cloud.ranks)
        self.n = len(cloud)

    def counts(self, pred):
        m = np.zeros(self.C * self.C, dtype=np.int64)
        np.add.at(m, self.true * self.C + pred, 1)
        return m.reshape(self.C, self.C)

    def rules(self, default, rects) -> RectangleRuleSet:
        out = {}
        for k, r in rects.items():
            if r is not None:
                a, b, c, d = r
                out[self.classes[k]] = (float(self.tx[a]), float(self.tx[b]), float(self.ty[c]), float(self.ty[d]))
        return RectangleRuleSet(self.classes, self.classes[default], out)


# ------------------------------------------------------------ exhaustive


def _rect_masks(p: _Problem):
    nx, ny = len(p.tx) - 1, len(p.ty) - 1
    boxes, masks = [None], [np.zeros(nx * ny, dtype=np.float64)]
    gx, gy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    gx, gy = gx.ravel(), gy.ravel()
    for a in range(nx):
        for b in range(a + 1, nx + 1):
            inx = (gx >= a) & (gx < b)
            for c in range(ny):
                for d in range(c + 1, ny + 1):
                    boxes.append((a, b, c, d))
                    masks.append((inx & (gy >= c) & (gy < d)).astype(np.float64))
    return boxes, np.array(masks)


def exhaustive_size(p: _Problem) -> int:
    nx, ny = len(p.tx) - 1, len(p.ty) - 1
    R = (nx * (nx + 1) // 2) * (ny * (ny + 1) // 2)
    return p.C * (R + 1) ** (p.C - 1)


def _fit_exhaustive(p: _Problem):
    boxes, M = _rect_masks(p)
    nx, ny = len(p.tx) - 1, len(p.ty) - 1
    N = np.zeros((nx * ny, p.C))
    np.add.at(N, (p.cx * ny + p.cy, p.true), 1)
    tot = N.sum(axis=0)
    A = M @ N  # true-class counts inside each box
    best = (-np.inf, None)
    C = p.C
    for d in range(C):
        others = [k for k in range(C) if k != d][::-1]  # descending priority
        if C == 2:
            (k,) = others
            cm = np.zeros((len(boxes), C, C))
            cm[:, :, k] = A
            cm[:, :, d] = tot - A
            score = mcc_from_counts(cm)
            i = int(np.argmax(score))
            if score[i] > best[0]:
                best = (score[i], (d, {k: boxes[i]}))
            continue
        k1, k2 = others
        R = len(boxes)
        for i in range(R):
            inter = (M[i] * M) @ N  # (R, C): inside both box i and box j
            cm = np.zeros((R, C, C))
            cm[:, :, k1] = A[i]
            cm[:, :, k2] = A - inter
            cm[:, :, d] = tot - A[i] - (A - inter)
            score = mcc_from_counts(cm)
            j = int(np.argmax(score))
            if score[j] > best[0]:
                best = (score[j], (d, {k1: boxes[i], k2: boxes[j]}))
    return best


# ------------------------------------------------------- coordinate ascent


class _State:
    def __init__(self, p, default, rects):
        self.p = p
        self.default = default
        self.rects = {k: rects.get(k) for k in range(p.C) if k != default}

    def copy(self):
        return _State(self.p, self.default, dict(self.rects))

    def inside(self, k):
        r = self.rects.get(k)
        if r is None:
            return np.zeros(self.p.n, dtype=bool)
        a, b, c, d = r
        p = self.p
        return (p.cx >= a) & (p.cx < b) & (p.cy >= c) & (p.cy < d)

    def predict(self, skip=None):
        """Assignments, and the mask of points captured by ranks above ``skip``."""
        pred = np.full(self.p.n, self.default, dtype=np.int64)
        done = np.zeros(self.p.n, dtype=bool)
        higher = None
        for k in range(self.p.C - 1, -1, -1):
            if k == skip:
                higher = done.copy()
                continue
            if k == self.default or self.rects.get(k) is None:
                continue
            m = ~done & self.inside(k)
            pred[m] = k
            done |= m
        return pred, higher

    def score(self):
        return float(mcc_from_counts(self.p.counts(self.predict()[0])))


def _line_search(state: _State, k: int, side: int):
    """Best value of one boundary of rank k's rectangle, others fixed. Returns (mcc, index)."""
    p = state.p
    a, b, c, d = state.rects[k]
    base, higher = state.predict(skip=k)
    cell = p.cx if side < 2 else p.cy
    other = [(p.cx >= a) & (p.cx < b), (p.cy >= c) & (p.cy < d)][1 if side < 2 else 0]
    n_t = len(p.tx if side < 2 else p.ty)
    lo, hi = (a, b) if side < 2 else (c, d)
    mover = ~higher & other
    C = p.C
    start = p.counts(base).reshape(-1).astype(np.float64)
    delta = np.zeros((n_t, C * C))
    t, f, cl = p.true[mover], base[mover], cell[mover]
    if side % 2 == 1:  # upper boundary u in (lo, n_t-1]: point inside when lo <= cell < u
        sel = cl >= lo
        np.add.at(delta, (cl[sel] + 1, t[sel] * C + f[sel]), -1)
        np.add.at(delta, (cl[sel] + 1, t[sel] * C + k), 1)
        cm = start + np.cumsum(delta, axis=0)
        valid = np.arange(n_t) > lo
    else:  # lower boundary l in [0, hi): point inside when l <= cell < hi
        sel = cl < hi
        np.add.at(delta, (cl[sel], t[sel] * C + f[sel]), -1)
        np.add.at(delta, (cl[sel], t[sel] * C + k), 1)
        cm = start + np.cumsum(delta[::-1], axis=0)[::-1]
        valid = np.arange(n_t) < hi
    score = np.where(valid, mcc_from_counts(cm.reshape(n_t, C, C)), -np.inf)
    i = int(np.argmax(score))
    return float(score[i]), i


def _ascend(state: _State, max_sweeps=100):
    cur = state.score()
    for _ in range(max_sweeps):
        improved = False
        for k in range(state.p.C - 1, -1, -1):
            if k == state.default:
                continue
            if state.rects[k] is not None:
                for side in range(4):
                    s, i = _line_search(state, k, side)
                    if s > cur + 1e-12:
                        r = list(state.rects[k])
                        r[side] = i
                        state.rects[k] = tuple(r)
                        cur, improved = s, True
                saved = state.rects[k]
                state.rects[k] = None
                s = state.score()
                if s > cur + 1e-12:
                    cur, improved = s, True
                else:
                    state.rects[k] = saved
            else:
                trial = state.copy()
                trial.rects[k] = _class_box(state.p, k, 0.1, 0.9)
                if trial.rects[k] is not None:
                    s = trial.score()
                    if s > cur + 1e-12:
                        state.rects, cur, improved = trial.rects, s, True
        if not improved:
            break
    return cur


def _class_box(p, k, qlo, qhi):
    sel = p.true == k
    if not np.any(sel):
        return None
    xs, ys = p.cx[sel], p.cy[sel]
    a, b = int(np.quantile(xs, qlo)), int(np.quantile(xs, qhi)) + 1
    c, d = int(np.quantile(ys, qlo)), int(np.quantile(ys, qhi)) + 1
    return (a, b, c, d)


def _fit_ascent(p: _Problem, restarts, seed, seed_state=None):
    rng = np.random.default_rng(seed)
    freq = np.bincount(p.true, minlength=p.C)
    starts = []
    if seed_state is not None:
        starts.append(seed_state)
    while len(starts) < restarts:
        i = len(starts)
        default = int(np.argmax(freq)) if i % 2 == 0 else int(rng.integers(p.C))
        rects = {}
        for k in range(p.C):
            if k == default:
                continue
            lo = rng.uniform(0.0, 0.25)
            hi = rng.uniform(0.75, 1.0)
            rects[k] = _class_box(p, k, lo, hi)
        starts.append(_State(p, default, rects))
    best = (-np.inf, None)
    for st in starts:
        s = _ascend(st)
        if s > best[0] + 1e-12 or best[1] is None:
            best = (s, (st.default, {k: r for k, r in st.rects.items() if r is not None}))
    return best


# -------------------------------------------------------------- y-only


def _band_counts(cells, true, C, n_cells):
    N = np.zeros((n_cells, C))
    np.add.at(N, (cells, true), 1)
    return np.concatenate([np.zeros((1, C)), np.cumsum(N, axis=0)])  # cum[i] = counts in cells < i


def _fit_bands(p: _Problem, restarts=8, seed=0):
    """Monotone y-bands, trying ranks ascending and descending along y.

    Returns (mcc, cuts, order) where band j (from the bottom) predicts class index order[j].
    """
    up = _fit_bands_oriented(p, p.true, restarts, seed)
    down = _fit_bands_oriented(p, p.C - 1 - p.true, restarts, seed)
    asc = list(range(p.C))
    if down[0] > up[0] + 1e-12:
        return down[0], down[1], asc[::-1]
    return up[0], up[1], asc


def _fit_bands_oriented(p: _Problem, true, restarts, seed):
    n_t = len(p.ty)
    cum = _band_counts(p.cy, true, p.C, n_t - 1)
    tot = cum[-1]
    C = p.C

    def cm_of(cuts):
        edges = [0, *cuts, n_t - 1]
        cols = [cum[edges[j + 1]] - cum[edges[j]] for j in range(C)]
        return np.stack(cols, axis=-1)

    if C == 2:
        cms = np.stack([cum, tot - cum], axis=-1)
        s = mcc_from_counts(cms)
        i = int(np.argmax(s))
        return float(s[i]), [i]
    if C == 3 and n_t <= 1500:
        i1, i2 = np.triu_indices(n_t)
        cms = np.stack([cum[i1], cum[i2] - cum[i1], tot - cum[i2]], axis=-1)
        s = mcc_from_counts(cms)
        j = int(np.argmax(s))
        return float(s[j]), [int(i1[j]), int(i2[j])]
    # coordinate ascent with exact line searches
    rng = np.random.default_rng(seed)
    order = np.argsort(p.cy)
    best = (-np.inf, None)
    for r in range(restarts):
        if r == 0:
            frac = np.cumsum(np.bincount(true, minlength=C))[:-1] / p.n
        else:
            frac = np.sort(rng.uniform(0, 1, C - 1))
        cuts = [int(p.cy[order[min(int(f * p.n), p.n - 1)]]) for f in frac]
        cuts = list(np.maximum.accumulate(cuts))
        cur = float(mcc_from_counts(cm_of(cuts)))
        for _ in range(100):
            improved = False
            for j in range(C - 1):
                lo = cuts[j - 1] if j > 0 else 0
                hi = cuts[j + 1] if j < C - 2 else n_t - 1
                cand = np.arange(lo, hi + 1)
                trial = np.array([cm_of(cuts[:j] + [c] + cuts[j + 1 :]) for c in cand])
                s = mcc_from_counts(trial)
                i = int(np.argmax(s))
                if s[i] > cur + 1e-12:
                    cuts[j], cur, improved = int(cand[i]), float(s[i]), True
            if not improved:
                break
        if cur > best[0]:
            best = (cur, list(cuts))
    return best


def _bands_to_state(p: _Problem, cuts, order):
    edges = [0, *cuts, len(p.ty) - 1]
    rects = {}
    for j in range(1, p.C):
        if edges[j] < edges[j + 1]:
            rects[order[j]] = (0, len(p.tx) - 1, edges[j], edges[j + 1])
    return _State(p, order[0], rects)


def fit_axis_thresholds(cloud: SumPointCloud, classes=None, seed=0):
    """Best y-only rule: ranks in monotone order (either direction) on bands of y.

    Returns (thresholds, mcc, rules); the rule set is the same classifier
    written as full-width rectangles.
    """
    p = _Problem(cloud, classes if classes is not None else np.unique(cloud.ranks))
    score, cuts, order = _fit_bands(p, seed=seed)
    st = _bands_to_state(p, cuts, order)
    return [float(p.ty[c]) for c in cuts], score, p.rules(st.default, st.rects)


# ------------------------------------------------------------------ fit


def fit(cloud: SumPointCloud, classes=None, restarts=8, seed=0, method="auto", max_exhaustive=EXHAUSTIVE_LIMIT):
    """Rectangle rules maximizing MCC on the cloud.  Returns (rules, mcc).

    Small instances (at most three classes and at most ``max_exhaustive``
    rule combinations) are solved by exhaustive enumeration over threshold
    cells.  Otherwise coordinate ascent with exact per-boundary line
    searches runs from ``restarts`` starting points, the first of which is
    the best y-only band rule, so the result never scores below it.
    """
    p = _Problem(cloud, classes if classes is not None else np.unique(cloud.ranks))
    if method not in ("auto", "exhaustive", "ascent"):
        raise ConfigurationError(f"unknown method {method!r}")
    if method == "exhaustive" or (method == "auto" and p.C <= 3 and exhaustive_size(p) <= max_exhaustive):
        if p.C > 3:
            raise ConfigurationError("exhaustive search supports at most three classes")
        score, (d, rects) = _fit_exhaustive(p)
    else:
        _, cuts, order = _fit_bands(p, seed=seed)
        score, (d, rects) = _fit_ascent(p, restarts, seed, _bands_to_state(p, cuts, order))
    rules = p.rules(d, rects)
    # score from the rule set itself, so reported MCC is exactly what classify gives
    pred = rules.classify_many(cloud.x, cloud.y)
    return rules, float(mcc_from_counts(p.counts(np.searchsorted(np.array(p.classes), pred))))


def rules_mcc(rules: RectangleRuleSet, cloud: SumPointCloud) -> float:
    classes = np.array(rules.classes)
    pred = np.searchsorted(classes, rules.classify_many(cloud.x, cloud.y))
    true = np.searchsorted(classes, cloud.ranks)
    m = np.zeros((len(classes), len(classes)), dtype=np.int64)
    np.add.at(m, (true, pred), 1)
    return float(mcc_from_counts(m))


# ------------------------------------------------------------------ grids


def region_grid(classifier, x_range, y_range, resolution=100, log10N=None,
                x_col="s0@1000", y_col="s0@100000"):
    """Predicted rank on a lattice.  Returns (xs, ys, labels[len(ys), len(xs)]).

    ``classifier`` is a RectangleRuleSet or a sum MLP whose inputs are
    log10N and the two plotted sums; ``log10N`` is held fixed for the MLP.
    """
    nx, ny = (resolution, resolution) if np.isscalar(resolution) else resolution
    if nx < 2 or ny < 2:
        raise ConfigurationError("grid resolution must be at least 2 per axis")
    xs = np.linspace(x_range[0], x_range[1], nx)
    ys = np.linspace(y_range[0], y_range[1], ny)
    gx, gy = np.meshgrid(xs, ys)
    if isinstance(classifier, RectangleRuleSet):
        lab = classifier.classify_many(gx.ravel(), gy.ravel())
    else:
        cols = list(classifier.config.columns)
        if sorted(cols) != sorted(["log10N", x_col, y_col]):
            raise InputError(f"model inputs {cols} are not log10N, {x_col}, {y_col}")
        if log10N is None:
            raise InputError("log10N required for a network classifier")
        vals = {"log10N": np.full(gx.size, float(log10N)), x_col: gx.ravel(), y_col: gy.ravel()}
        X = np.stack([vals[c] for c in cols], axis=1)
        lab = predict(classifier, X)
    return xs, ys, lab.reshape(ny, nx)


def write_grid_csv(path, xs, ys, labels):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "rank"])
        for j, yv in enumerate(ys):
            for i, xv in enumerate(xs):
                w.writerow([f"{xv:.17g}", f"{yv:.17g}", int(labels[j, i])])


def write_cloud_csv(path, cloud: SumPointCloud):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "x", "y", "rank"])
        labels = cloud.labels or [str(i) for i in range(len(cloud))]
        for lab, xv, yv, r in zip(labels, cloud.x, cloud.y, cloud.ranks):
            w.writerow([lab, f"{xv:.17g}", f"{yv:.17g}", int(r)])
