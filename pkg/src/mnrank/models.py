"""Rank classifiers: an MLP over Mestre-Nagao sums and a network that learns a weighted a_p sum."""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .dataset import class_weights
from .errors import CheckpointError, ConfigurationError, InputError, NumericError, TrainingError
from .metrics import confusion, mcc
from .primes import positional_encodings, sieve_primes


def _class_index(labels, classes):
    classes = np.asarray(classes)
    labels = np.asarray(labels, dtype=np.int64)
    idx = np.searchsorted(classes, labels)
    idx = np.clip(idx, 0, len(classes) - 1)
    if labels.size and not np.array_equal(classes[idx], labels):
        bad = sorted(set(labels.tolist()) - set(classes.tolist()))
        raise InputError(f"labels {bad} not in classes {classes.tolist()}")
    return idx


# ---------------------------------------------------------- sum MLP


@dataclass(frozen=True)
class SumMlpConfig:
    columns: tuple = ("log10N", "s0@1000", "s0@100000", "s5@1000", "s5@100000")
    hidden_layers: int = 4
    hidden_width: int = 128
    classes: tuple = (0, 1, 2, 3, 4)
    lr: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 1024
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))
        if "log10N" not in self.columns or len(self.columns) < 2:
            raise ConfigurationError("inputs must include log10N and at least one sum")
        if not 3 <= self.hidden_layers <= 6:
            raise ConfigurationError(f"hidden_layers must be in 3..6, got {self.hidden_layers}")
        w = self.hidden_width
        if not (8 <= w <= 512 and w & (w - 1) == 0):
            raise ConfigurationError(f"hidden_width must be a power of two in [8, 512], got {w}")
        if len(self.classes) < 2 or list(self.classes) != sorted(set(self.classes)):
            raise ConfigurationError("classes must be at least two ascending ranks")

    @property
    def input_dim(self):
        return len(self.columns)


class SumMlp(nn.Module):
    """Input standardization (frozen), then Dense-ReLU blocks and a linear output layer."""

    kind = "sum_mlp"

    def __init__(self, config: SumMlpConfig, dtype=np.float32):
        self.config = config
        rng = np.random.default_rng([config.seed, 0])
        d = config.input_dim
        self.mean = nn.Parameter(np.zeros(d, dtype), requires_grad=False)
        self.scale = nn.Parameter(np.ones(d, dtype), requires_grad=False)
        sizes = [d] + [config.hidden_width] * config.hidden_layers + [len(config.classes)]
        self.net = nn.mlp(sizes, rng, dtype)

    def named_parameters(self, prefix=""):
        return [("input.mean", self.mean), ("input.scale", self.scale), *self.net.named_parameters("net.")]

    def fit_standardization(self, X):
        X = np.asarray(X, dtype=np.float64)
        sd = X.std(axis=0)
        self.mean.value[...] = X.mean(axis=0)
        self.scale.value[...] = 1.0 / np.where(sd > 0, sd, 1.0)

    def topology(self):
        c = self.config
        return {"kind": self.kind, "columns": list(c.columns), "hidden_layers": c.hidden_layers,
                "hidden_width": c.hidden_width, "classes": list(c.classes)}

    def check_inputs(self, X):
        X = np.asarray(X)
        if X.ndim != 2 or X.shape[1] != self.config.input_dim:
            raise InputError(f"expected (batch, {self.config.input_dim}) features, got {X.shape}")
        return X

    def logits(self, X):
        X = self.check_inputs(X).astype(self.mean.value.dtype, copy=False)
        return self.net.forward((X - self.mean.value) * self.scale.value)

    def loss_and_grad(self, inputs, y, wvec, backward=True):
        (X,) = inputs
        logits = self.logits(X)
        loss, g = nn.weighted_cross_entropy(logits, y, wvec)
        if backward:
            self.net.backward(g)
        return loss

    def predict_proba(self, X):
        return nn.softmax(self.logits(X))

    def eval_inputs(self, inputs, batch=8192):
        (X,) = inputs
        return [self.predict_proba(X[i : i + batch]) for i in range(0, len(X), batch)]


def sum_mlp_forward(config_or_model, features):
    """Class probabilities for a batch of SumFeatures (or a raw feature matrix)."""
    model = config_or_model if isinstance(config_or_model, SumMlp) else SumMlp(config_or_model)
    cols = model.config.columns
    if isinstance(features, np.ndarray):
        X = features
    else:
        try:
            X = np.array([f.row(cols) for f in features], dtype=np.float64)
        except KeyError as e:
            raise InputError(f"feature {e.args[0]} missing for columns {cols}") from None
    return model.predict_proba(X)


# ------------------------------------------------------ learned sum


@dataclass(frozen=True)
class LearnedSumConfig:
    conductor_dependent: bool = False
    prime_limit: int = 100000
    channels: int = 128
    head_width: int = 128
    classes: tuple = (0, 1, 2, 3, 4, 5)
    lr: float = 1e-4
    weight_decay: float = 0.01
    batch_size: int = 256
    epochs: int = 5
    warmup_fraction: float = 0.3
    div_initial: float = 25.0
    div_final: float = 1e4
    chunk: int = 4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))
        if len(self.classes) < 2 or list(self.classes) != sorted(set(self.classes)):
            raise ConfigurationError("classes must be at least two ascending ranks")
        if self.prime_limit < 3 or self.channels < 1 or self.head_width < 1 or self.chunk < 1:
            raise ConfigurationError("invalid learned-sum dimensions")

    @property
    def in_channels(self):
        return 2 if self.conductor_dependent else 1


class LearnedSum(nn.Module):
    """Per-prime weights w_p from a pointwise-conv generator, S_opt = sum_p w_p a_p / sqrt(p),
    and a dense head on (log10 N, S_opt)."""

    kind = "learned_sum"

    def __init__(self, config: LearnedSumConfig, dtype=np.float32):
        self.config = config
        rng = np.random.default_rng([config.seed, 0])
        table = sieve_primes(config.prime_limit)
        self.primes = table.primes
        self.pe = positional_encodings(table, config.prime_limit - 1).astype(dtype)
        ch = config.channels
        widths = [config.in_channels, ch, ch, ch, ch, 1]
        layers = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            layers.append(nn.PointwiseConv(a, b, rng, dtype))
            if i < len(widths) - 2:
                layers.append(nn.ReLU())
        self.generator = nn.Sequential(layers)
        hw = config.head_width
        self.head = nn.mlp([2, hw, hw, hw, len(config.classes)], rng, dtype)

    @property
    def length(self):
        return len(self.pe)

    def named_parameters(self, prefix=""):
        return [*self.generator.named_parameters("generator."), *self.head.named_parameters("head.")]

    def astype(self, dtype):
        super().astype(dtype)
        self.pe = self.pe.astype(dtype)
        return self

    def topology(self):
        c = self.config
        return {"kind": self.kind, "conductor_dependent": c.conductor_dependent, "prime_limit": c.prime_limit,
                "channels": c.channels, "head_width": c.head_width, "classes": list(c.classes),
                "length": self.length}

    def _gen_input(self, log10N):
        dt = self.pe.dtype
        if not self.config.conductor_dependent:
            return self.pe[None, None, :]
        n = len(log10N)
        x = np.empty((n, 2, self.length), dt)
        x[:, 0, :] = self.pe
        x[:, 1, :] = np.asarray(log10N, dt)[:, None]
        return x

    def check_inputs(self, ap_norm, log10N):
        ap_norm = np.asarray(ap_norm)
        log10N = np.asarray(log10N)
        if ap_norm.ndim != 2 or ap_norm.shape[1] != self.length or log10N.shape != (ap_norm.shape[0],):
            raise InputError(f"expected ap_norm (batch, {self.length}) and log10N (batch,), "
                             f"got {ap_norm.shape} and {log10N.shape}")
        dt = self.pe.dtype
        return ap_norm.astype(dt, copy=False), log10N.astype(dt, copy=False)

    def weights(self, log10N=None):
        """Emitted w_p: shape (length,) when conductor-independent, else (batch, length)."""
        if not self.config.conductor_dependent:
            return self.generator.forward(self._gen_input(None))[0, 0]
        log10N = np.atleast_1d(np.asarray(log10N, self.pe.dtype))
        out = np.empty((len(log10N), self.length), self.pe.dtype)
        for i in range(0, len(log10N), self.config.chunk):
            out[i : i + self.config.chunk] = self.generator.forward(self._gen_input(log10N[i : i + self.config.chunk]))[:, 0]
        return out

    def s_opt(self, ap_norm, log10N):
        w = self.weights(log10N)
        if w.ndim == 1:
            return ap_norm @ w, w
        return np.einsum("bl,bl->b", ap_norm, w), w

    def forward_full(self, ap_norm, log10N):
        """(logits, S_opt, w) without caching for backward."""
        ap_norm, log10N = self.check_inputs(ap_norm, log10N)
        S, w = self.s_opt(ap_norm, log10N)
        H = np.stack([log10N, S], axis=1)
        return self.head.forward(H), S, w

    def loss_and_grad(self, inputs, y, wvec, backward=True):
        ap_norm, log10N = self.check_inputs(*inputs)
        cd = self.config.conductor_dependent
        if not cd:
            w = self.generator.forward(self._gen_input(None))[0, 0]
            S = ap_norm @ w
        else:
            S, _ = self.s_opt(ap_norm, log10N)
        logits = self.head.forward(np.stack([log10N, S], axis=1))
        loss, g = nn.weighted_cross_entropy(logits, y, wvec)
        if not backward:
            return loss
        dS = self.head.backward(g)[:, 1]
        if not cd:
            self.generator.backward((dS @ ap_norm)[None, None, :])
        else:
            # recompute the generator chunk by chunk so only one chunk of activations is alive
            k = self.config.chunk
            for i in range(0, len(log10N), k):
                self.generator.forward(self._gen_input(log10N[i : i + k]))
                self.generator.backward((dS[i : i + k, None] * ap_norm[i : i + k])[:, None, :])
        return loss

    def predict_proba(self, ap_norm, log10N):
        return nn.softmax(self.forward_full(ap_norm, log10N)[0])

    def eval_inputs(self, inputs, batch=256):
        ap_norm, log10N = inputs
        return [self.predict_proba(ap_norm[i : i + batch], log10N[i : i + batch])
                for i in range(0, len(ap_norm), batch)]


def learned_sum_forward(config_or_model, ap_norm, log10N):
    """(class probabilities, emitted weights); weights are per row when conductor-dependent."""
    model = config_or_model if isinstance(config_or_model, LearnedSum) else LearnedSum(config_or_model)
    logits, _, w = model.forward_full(ap_norm, log10N)
    return nn.softmax(logits), w


def normalize_traces(values, primes) -> np.ndarray:
    """a_p / sqrt(p), bad primes included, as float32."""
    return (np.asarray(values, dtype=np.float64) / np.sqrt(np.asarray(primes, dtype=np.float64))).astype(np.float32)


# ------------------------------------------------------------ training


@dataclass
class Dataset:
    """Model inputs (a tuple of aligned arrays) and rank labels."""

    inputs: tuple
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def take(self, idx):
        return Dataset(tuple(a[idx] for a in self.inputs), self.labels[idx])


@dataclass
class TrainResult:
    model: object
    log: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_mcc: float = float("nan")


def predict_classes(model, inputs) -> np.ndarray:
    """Argmax rank per row; exact ties go to the smaller rank."""
    probs = np.concatenate(model.eval_inputs(inputs), axis=0)
    return np.asarray(model.config.classes)[np.argmax(probs, axis=1)]


def evaluate_mcc(model, data: Dataset) -> float:
    pred = predict_classes(model, data.inputs)
    return mcc(confusion(data.labels, pred, model.config.classes))


def train(model, train_data: Dataset, val_data: Dataset | None = None, log_path=None) -> TrainResult:
    """Minibatch AdamW on class-weighted cross-entropy, keeping the best-validation-MCC epoch.

    The sum MLP trains at constant learning rate; the learned-sum network
    uses a one-cycle schedule peaking at ``config.lr``.
    """
    cfg = model.config
    classes = cfg.classes
    y = _class_index(train_data.labels, classes)
    wvec = class_weights(train_data.labels, classes).vector(classes)
    if isinstance(model, SumMlp):
        model.fit_standardization(train_data.inputs[0])
    opt = nn.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    n = len(train_data)
    n_batches = max(1, math.ceil(n / cfg.batch_size))
    sched = None
    if isinstance(model, LearnedSum) and cfg.epochs > 0:
        sched = nn.OneCycleSchedule(cfg.lr, cfg.epochs * n_batches, cfg.warmup_fraction,
                                    cfg.div_initial, cfg.div_final)
    rng = np.random.default_rng([cfg.seed, 1])
    best = None
    result = TrainResult(model)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, weight = 0.0, 0.0
        for b in range(n_batches):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            batch = tuple(a[idx] for a in train_data.inputs)
            opt.zero_grad()
            try:
                loss = model.loss_and_grad(batch, y[idx], wvec)
            except NumericError as e:
                raise TrainingError(f"non-finite values at step {step}: {e}", step=step) from None
            if not math.isfinite(loss):
                raise TrainingError(f"loss diverged at step {step}", step=step)
            opt.step(sched.lr(step) if sched is not None else None)
            bw = float(wvec[y[idx]].sum())
            total += loss * bw
            weight += bw
            step += 1
        entry = {"epoch": epoch, "steps": step, "train_loss": total / weight}
        if val_data is not None and len(val_data):
            entry["val_mcc"] = evaluate_mcc(model, val_data)
            if best is None or entry["val_mcc"] > result.best_val_mcc:
                best = [p.value.copy() for p in model.parameters()]
                result.best_epoch, result.best_val_mcc = epoch, entry["val_mcc"]
        result.log.append(entry)
    if best is not None:
        for p, v in zip(model.parameters(), best):
            p.value[...] = v
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            for e in result.log:
                fh.write(json.dumps(e, sort_keys=True) + "\n")
    return result


# --------------------------------------------------------- checkpoints


def save_model(model, path):
    nn.save_checkpoint(path, model.topology(), [(n, p.value) for n, p in model.named_parameters()],
                       seed=model.config.seed, config=_config_json(model.config))


def _config_json(cfg):
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def load_model(path):
    header, arrays = nn.load_checkpoint(path)
    kind = header["topology"].get("kind")
    cfg = header["config"]
    if kind == SumMlp.kind:
        model = SumMlp(SumMlpConfig(**cfg))
    elif kind == LearnedSum.kind:
        model = LearnedSum(LearnedSumConfig(**cfg))
    else:
        raise CheckpointError(f"unknown model kind {kind!r}")
    if model.topology() != header["topology"]:
        raise CheckpointError("checkpoint topology does not match its configuration")
    for name, p in model.named_parameters():
        if name not in arrays or arrays[name].shape != p.value.shape:
            raise CheckpointError(f"parameter {name} missing or mis-shaped")
        p.value[...] = arrays[name]
    return model


def predict(checkpoint, inputs) -> np.ndarray:
    """Predicted rank per row for a model object or checkpoint path.

    ``inputs`` is a feature matrix for the sum MLP and ``(ap_norm, log10N)``
    for the learned-sum network.
    """
    model = load_model(checkpoint) if not isinstance(checkpoint, nn.Module) else checkpoint
    if isinstance(model, SumMlp):
        X = np.asarray(inputs[0] if isinstance(inputs, tuple) else inputs)
        if X.ndim != 2 or X.shape[1] != model.config.input_dim:
            raise CheckpointError(f"model expects {model.config.input_dim} features "
                                  f"{list(model.config.columns)}, input has shape {X.shape}")
        return predict_classes(model, (X,))
    ap_norm, log10N = inputs
    if np.ndim(ap_norm) != 2 or np.shape(ap_norm)[1] != model.length:
        raise CheckpointError(f"model expects {model.length} normalized traces per row")
    return predict_classes(model, (np.asarray(ap_norm), np.asarray(log10N)))


# ---------------------------------------------------- hyperparameters


def hyperparameter_search(space: dict, train_data: Dataset, val_data: Dataset, base: SumMlpConfig,
                          budget: int | None = None):
    """Grid search over SumMlpConfig fields, scored by validation MCC.

    ``space`` maps field names (hidden_layers, hidden_width, lr, ...) to
    candidate lists.  ``budget`` caps the number of training rows (the first
    ones, which are already shuffled by the split).  Returns the best config
    and the trial table; ties keep the earlier grid point.
    """
    keys = sorted(space)
    grids = [list(space[k]) for k in keys]
    if not keys or any(len(g) == 0 for g in grids):
        raise ConfigurationError("empty hyperparameter grid")
    tr = train_data if budget is None else train_data.take(np.arange(min(budget, len(train_data))))
    trials, best, best_score = [], None, -math.inf
    for combo in itertools.product(*grids):
        cfg = replace(base, **dict(zip(keys, combo)))
        res = train(SumMlp(cfg), tr, val_data)
        score = res.best_val_mcc if val_data is not None else float("nan")
        trials.append({**dict(zip(keys, combo)), "val_mcc": score, "best_epoch": res.best_epoch})
        if score > best_score:
            best, best_score = cfg, score
    return best, trials


# --------------------------------------------------------- weights report


def weights_report(model: LearnedSum, path=None, decades=range(1, 10)):
    """Emitted w_p per conductor decade, evaluated at log10 N = k + 0.5.

    Returns a (n_decades, length) array; writes CSV rows ``decade,log10N,p,w_p``.
    """
    decades = list(decades)
    centers = np.array([k + 0.5 for k in decades])
    if model.config.conductor_dependent:
        W = model.weights(centers)
    else:
        W = np.repeat(model.weights()[None, :], len(decades), axis=0)
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["decade", "log10N", "p", "w_p"])
            for k, c, row in zip(decades, centers, W):
                for p, v in zip(model.primes, row):
                    w.writerow([k, f"{c:.1f}", int(p), f"{float(v):.9g}"])
    return W
