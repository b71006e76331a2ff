"""A small numpy neural-network stack with hand-written backward passes.

Arrays are plain ``numpy.ndarray`` (float32 for training, float64 for
gradient checks).  Every layer caches what its backward pass needs during
``forward`` and accumulates into ``Parameter.grad`` during ``backward``.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import BoundError, CheckpointError, NumericError, ShapeError


class Parameter:
    def __init__(self, value, requires_grad=True):
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def astype(self, dtype):
        self.value = self.value.astype(dtype)
        self.grad = np.zeros_like(self.value)


def kaiming_uniform(rng, fan_out, fan_in, dtype=np.float32):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype)


class Module:
    def named_parameters(self, prefix=""):
        return []

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad[...] = 0

    def astype(self, dtype):
        for p in self.parameters():
            p.astype(dtype)
        return self

    def __call__(self, x):
        return self.forward(x)


class Dense(Module):
    """y = x W^T + b on a (batch, in) array."""

    def __init__(self, n_in, n_out, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W = Parameter(kaiming_uniform(rng, n_out, n_in, dtype))
        self.b = Parameter(np.zeros(n_out, dtype))
        self._x = None

    def named_parameters(self, prefix=""):
        return [(prefix + "W", self.W), (prefix + "b", self.b)]

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.W.shape[1]:
            raise ShapeError(f"dense layer expects (batch, {self.W.shape[1]}), got {x.shape}")
        self._x = x
        return x @ self.W.value.T + self.b.value

    def backward(self, g):
        if self.W.requires_grad:
            self.W.grad += g.T @ self._x
        if self.b.requires_grad:
            self.b.grad += g.sum(axis=0)
        return g @ self.W.value


class PointwiseConv(Module):
    """Kernel-size-1 convolution: the same (out_ch, in_ch) map at every position of (batch, in_ch, len)."""

    def __init__(self, in_ch, out_ch, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W = Parameter(kaiming_uniform(rng, out_ch, in_ch, dtype))
        self.b = Parameter(np.zeros(out_ch, dtype))
        self._x = None

    def named_parameters(self, prefix=""):
        return [(prefix + "W", self.W), (prefix + "b", self.b)]

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.W.shape[1]:
            raise ShapeError(f"pointwise conv expects (batch, {self.W.shape[1]}, len), got {x.shape}")
        self._x = x
        return np.matmul(self.W.value, x) + self.b.value[:, None]

    def backward(self, g):
        x = self._x
        if self.W.requires_grad:
            self.W.grad += np.einsum("bol,bil->oi", g, x, optimize=True)
        if self.b.requires_grad:
            self.b.grad += g.sum(axis=(0, 2))
        return np.matmul(self.W.value.T, g)


class ReLU(Module):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, g):
        return g * self._mask


def relu(x):
    return np.maximum(x, 0)


def dense_forward(layer: Dense, x):
    return layer.forward(np.asarray(x))


def pointwise_conv_forward(layer: PointwiseConv, x):
    return layer.forward(np.asarray(x))


class Sequential(Module):
    def __init__(self, layers):
        self.layers = list(layers)

    def named_parameters(self, prefix=""):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.named_parameters(f"{prefix}{i}."))
        return out

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g


def mlp(sizes, rng, dtype=np.float32):
    """Dense layers of the given widths with ReLU between them (none after the last)."""
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(Dense(a, b, rng, dtype))
        if i < len(sizes) - 2:
            layers.append(ReLU())
    return Sequential(layers)


# ------------------------------------------------------------------- loss


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits):
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def weighted_cross_entropy(logits, labels, weights):
    """Class-weighted mean negative log-likelihood and its gradient w.r.t. the logits.

    ``labels`` are class indices; ``weights[c]`` is the weight of class c.
    The mean is normalized by the total weight of the batch.
    """
    logits = np.asarray(logits)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    labels = np.asarray(labels, dtype=np.int64)
    n, C = logits.shape
    if labels.shape != (n,) or (n and (labels.min() < 0 or labels.max() >= C)):
        raise ShapeError("labels must be class indices in [0, C), one per row")
    w = np.asarray(weights, dtype=logits.dtype)[labels]
    lsm = log_softmax(logits)
    total = w.sum()
    loss = float(-(w * lsm[np.arange(n), labels]).sum() / total)
    grad = np.exp(lsm)
    grad[np.arange(n), labels] -= 1
    grad *= (w / total)[:, None]
    return loss, grad.astype(logits.dtype, copy=False)


# -------------------------------------------------------------- optimizer


class AdamW:
    """Adam with decoupled weight decay: p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            upd = (m / c1) / (np.sqrt(v / c2) + self.eps) + self.weight_decay * p.value
            p.value -= (lr * upd).astype(p.value.dtype, copy=False)

    def zero_grad(self):
        for p in self.params:
            p.grad[...] = 0


def adamw_step(state: AdamW, params=None, grads=None, lr=None):
    """Functional form: optionally load ``grads`` into ``params`` then take one step."""
    if grads is not None:
        for p, g in zip(params if params is not None else state.params, grads):
            p.grad[...] = g
    state.step(lr)
    return state


@dataclass(frozen=True)
class OneCycleSchedule:
    """Cosine warm-up from max_lr/div_initial to max_lr, then cosine decay to max_lr/div_final.

    Phase boundaries follow the common convention: the peak sits at step
    ``warmup_fraction * total_steps - 1`` and the floor at ``total_steps - 1``.
    """

    max_lr: float
    total_steps: int
    warmup_fraction: float = 0.3
    div_initial: float = 25.0
    div_final: float = 1e4

    def __post_init__(self):
        if self.total_steps < 1 or self.max_lr <= 0 or not 0 < self.warmup_fraction < 1:
            raise BoundError("invalid one-cycle parameters")

    def lr(self, step: int) -> float:
        if not 0 <= step < self.total_steps:
            raise BoundError(f"step {step} outside [0, {self.total_steps})")
        start = self.max_lr / self.div_initial
        end = self.max_lr / self.div_final
        peak = self.warmup_fraction * self.total_steps - 1.0
        last = self.total_steps - 1.0
        if step <= peak:
            frac = step / peak if peak > 0 else 1.0
            return _cos_anneal(start, self.max_lr, frac)
        frac = (step - peak) / (last - peak) if last > peak else 1.0
        return _cos_anneal(self.max_lr, end, frac)


def _cos_anneal(a, b, frac):
    return b + (a - b) / 2.0 * (1.0 + math.cos(math.pi * frac))


def one_cycle_lr(schedule: OneCycleSchedule, step: int) -> float:
    return schedule.lr(step)


# ------------------------------------------------------------ grad check


def grad_check(model, loss_fn, h=1e-5, max_per_param=20, seed=0):
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn(backward)`` must run a forward pass and return the scalar loss,
    filling ``Parameter.grad`` when ``backward`` is True.  Parameters with
    ``requires_grad=False`` are skipped.  Run the model in float64.
    """
    rng = np.random.default_rng(seed)
    named = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    model.zero_grad()
    loss_fn(True)
    analytic = {n: p.grad.copy() for n, p in named}
    worst = 0.0
    for n, p in named:
        flat = p.value.reshape(-1)
        k = flat.size
        idx = np.arange(k) if k <= max_per_param else rng.choice(k, max_per_param, replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            up = loss_fn(False)
            flat[i] = old - h
            down = loss_fn(False)
            flat[i] = old
            num = (up - down) / (2 * h)
            a = analytic[n].reshape(-1)[i]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-6))
    return worst


# ------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"MNCK"
_U32 = struct.Struct("<I")


def save_checkpoint(path, topology: dict, named_arrays, seed=None, config=None):
    """Magic, u32 header length, sorted-key JSON header, then float32 little-endian payload."""
    entries, chunks = [], []
    offset = 0
    for name, arr in named_arrays:
        a = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.size
    payload = b"".join(chunks)
    header = {
        "format": 1,
        "topology": topology,
        "params": entries,
        "seed": seed,
        "config": config or {},
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + _U32.pack(len(hb)) + hb + payload)


def load_checkpoint(path):
    """Returns (header dict, {name: float32 array})."""
    data = open(path, "rb").read()
    if data[:4] != CKPT_MAGIC or len(data) < 8:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (n,) = _U32.unpack(data[4:8])
    try:
        header = json.loads(data[8 : 8 + n].decode("utf-8"))
    except ValueError as e:
        raise CheckpointError(f"{path}: bad header: {e}") from None
    payload = data[8 + n :]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError(f"{path}: payload checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f4")
    arrays = {}
    for e in header["params"]:
        size = int(np.prod(e["shape"], dtype=np.int64))
        arrays[e["name"]] = flat[e["offset"] : e["offset"] + size].reshape(e["shape"]).astype(np.float32)
    return header, arrays
