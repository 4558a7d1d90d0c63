"""MLP target model: parameters, forward pass, cross-entropy and epoch training.

Weights are stored as ``(fan_in, fan_out)`` matrices so that a layer computes
``h @ W + b``.  The canonical flat ordering is layer by layer, the weight matrix
row-major followed by the bias.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import DivergenceError

CHECKPOINT_MAGIC = b"FMLP"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    num_classes: int
    hidden_dims: tuple = (128,)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.num_classes)
        if any(int(n) < 1 for n in dims):
            raise ValueError(f"all layer sizes must be >= 1, got {dims}")

    @property
    def dims(self):
        return (self.input_dim, *self.hidden_dims, self.num_classes)

    def layer_shapes(self):
        d = self.dims
        return [(d[k], d[k + 1]) for k in range(len(d) - 1)]

    @property
    def num_params(self):
        return sum(i * o + o for i, o in self.layer_shapes())


@dataclass
class ParamVector:
    """Layer-wise parameters with a canonical flat view."""

    layers: list = field(default_factory=list)

    @classmethod
    def from_flat(cls, cfg, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (cfg.num_params,):
            raise ValueError(f"expected {cfg.num_params} parameters, got {flat.shape}")
        layers, pos = [], 0
        for fan_in, fan_out in cfg.layer_shapes():
            w = flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out).copy()
            pos += fan_in * fan_out
            b = flat[pos : pos + fan_out].copy()
            pos += fan_out
            layers.append((w, b))
        return cls(layers)

    def flat(self):
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.layers])

    def copy(self):
        return ParamVector([(w.copy(), b.copy()) for w, b in self.layers])

    def tensors(self, requires_grad=False):
        """Return ``[W1, b1, W2, b2, ...]`` as graph leaves."""
        out = []
        for w, b in self.layers:
            out.append(ad.Tensor(w, requires_grad))
            out.append(ad.Tensor(b, requires_grad))
        return out


def init_params(cfg):
    """Seeded uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    rng = np.random.default_rng(cfg.seed)
    layers = []
    for fan_in, fan_out in cfg.layer_shapes():
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append((w, b))
    return ParamVector(layers)


def zero_params(cfg):
    return ParamVector([(np.zeros(s), np.zeros(s[1])) for s in cfg.layer_shapes()])


def forward(params, X):
    """Logits of the MLP as a graph node.

    ``params`` is a ParamVector or the flat list ``[W1, b1, ...]`` of tensors;
    ``X`` may be an array or a tensor.
    """
    weights = params.tensors() if isinstance(params, ParamVector) else params
    h = ad.constant(X)
    if h.ndim != 2 or h.shape[1] != weights[0].shape[0]:
        raise ad.ShapeError("forward", h.shape, weights[0].shape)
    n_layers = len(weights) // 2
    for k in range(n_layers):
        h = h @ weights[2 * k] + weights[2 * k + 1]
        if k < n_layers - 1:
            h = ad.relu(h)
    return h


def forward_numpy(params, X):
    """Graph-free forward pass returning (last hidden activation, logits)."""
    h = np.asarray(X, dtype=np.float64)
    n_layers = len(params.layers)
    for k, (w, b) in enumerate(params.layers):
        z = h @ w + b
        if k < n_layers - 1:
            h = np.maximum(z, 0.0)
    return h, z


def predict_proba(params, X):
    _, z = forward_numpy(params, X)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def one_hot(y, num_classes):
    y = np.asarray(y)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"label out of range [0, {num_classes})")
    out = np.zeros((y.shape[0], num_classes))
    out[np.arange(y.shape[0]), y.astype(int)] = 1.0
    return out


def cross_entropy(logits, Y):
    """Mean cross-entropy; ``Y`` is integer labels or a soft (N, C) target.

    Soft targets may be tensors (the label-unknown attack optimises them).
    """
    n, c = logits.shape
    if isinstance(Y, ad.Tensor):
        target = Y
    else:
        arr = np.asarray(Y)
        if arr.ndim == 1:
            target = ad.Tensor(one_hot(arr, c))
        else:
            if arr.shape != (n, c):
                raise ad.ShapeError("cross_entropy", logits.shape, arr.shape)
            if n and np.abs(arr.sum(axis=1) - 1.0).max() > 1e-9:
                raise ValueError("soft label rows must sum to 1")
            target = ad.Tensor(arr.astype(np.float64))
    if target.shape != (n, c):
        raise ad.ShapeError("cross_entropy", logits.shape, target.shape)
    return -(target * ad.log_softmax(logits)).sum() * (1.0 / n)


def loss_and_grads(params, X, Y, create_graph=False):
    weights = params.tensors(requires_grad=True) if isinstance(params, ParamVector) else params
    loss = cross_entropy(forward(weights, X), Y)
    return loss, ad.grad(loss, weights, create_graph=create_graph)


def _flat(grads):
    return np.concatenate([g.data.ravel() for g in grads])


def local_epoch(params, X, Y, lr=0.01, batch_size=None, rng=None):
    """One epoch of plain SGD over shuffled minibatches.

    Returns ``(new_params, accumulated)`` where ``accumulated`` is the sum of
    the per-batch mean-loss gradients in canonical flat order.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty data")
    if batch_size is None or batch_size >= n:
        batches = [np.arange(n)]
    else:
        order = (rng or np.random.default_rng(0)).permutation(n)
        batches = [order[k : k + batch_size] for k in range(0, n, batch_size)]
    current = params.copy()
    accumulated = None
    for idx in batches:
        _, grads = loss_and_grads(current, X[idx], Y[idx])
        g = _flat(grads)
        if not np.isfinite(g).all():
            raise DivergenceError("non-finite gradient in local epoch")
        accumulated = g if accumulated is None else accumulated + g
        layers = []
        for k, (w, b) in enumerate(current.layers):
            layers.append((w - lr * grads[2 * k].data, b - lr * grads[2 * k + 1].data))
        current = ParamVector(layers)
    return current, accumulated


def grad_params(params, X, Y, batch_size=None, lr=0.01, rng=None):
    """Gradient of the mean loss over ``X``.

    With ``batch_size`` below ``len(X)`` the batch gradients are accumulated
    along the SGD path of one epoch.
    """
    if batch_size is None or batch_size >= len(X):
        if len(X) == 0:
            raise ValueError("empty data")
        _, grads = loss_and_grads(params, X, Y)
        return _flat(grads)
    return local_epoch(params, X, Y, lr=lr, batch_size=batch_size, rng=rng)[1]


def accuracy(params, X, Y):
    _, z = forward_numpy(params, X)
    return float(np.mean(z.argmax(axis=1) == np.asarray(Y)))


# ---------------------------------------------------------------------------
# checkpoints
#
# layout (little-endian):
#   magic "FMLP" | u16 version | u16 n_dims | u32 dims[n_dims] | u64 seed |
#   u32 epoch | u64 count | f64 values[count]


def save_checkpoint(path, cfg, params, epoch=0):
    flat = params.flat() if isinstance(params, ParamVector) else np.asarray(params, np.float64)
    dims = cfg.dims
    header = CHECKPOINT_MAGIC + struct.pack("<HH", CHECKPOINT_VERSION, len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    header += struct.pack("<QIQ", cfg.seed, epoch, flat.size)
    Path(path).write_bytes(header + flat.astype("<f8").tobytes())


def load_checkpoint(path):
    """Return ``(cfg, flat_params, epoch)``."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, n_dims = struct.unpack_from("<HH", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 8
    dims = struct.unpack_from(f"<{n_dims}I", raw, pos)
    pos += 4 * n_dims
    seed, epoch, count = struct.unpack_from("<QIQ", raw, pos)
    pos += 20
    flat = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).astype(np.float64)
    cfg = MlpConfig(dims[0], dims[-1], tuple(dims[1:-1]), seed)
    if count != cfg.num_params:
        raise ValueError(f"{path}: parameter count {count} does not match dims {dims}")
    return cfg, flat, epoch
