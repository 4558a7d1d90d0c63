"""Reverse-mode automatic differentiation over dense float64 arrays.

Every op records its parents together with a vector-Jacobian product (VJP)
closure.  The VJPs are themselves written with ``Tensor`` ops, so calling
:func:`grad` with ``create_graph=True`` yields gradients that can be
differentiated again (double backprop).  With ``create_graph=False`` the VJPs
run under :func:`no_grad` and nothing is recorded.

Graph recording is controlled by a thread-local flag, so independent graphs can
be built from different threads.
"""

from __future__ import annotations

import contextlib
import itertools
import threading

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "tensor",
    "constant",
    "no_grad",
    "grad",
    "matmul",
    "relu",
    "exp",
    "log",
    "softmax",
    "log_softmax",
    "concat",
    "dot",
    "norm2",
    "flatten_cat",
]

_state = threading.local()
_ids = itertools.count()


class ShapeError(ValueError):
    """Raised when an op receives shape-incompatible operands."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        listed = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {listed}")


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""

    def __init__(self, op):
        self.op = op
        super().__init__(f"{op}: produced a non-finite value")


def _recording():
    return getattr(_state, "record", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = _recording()
    _state.record = False
    try:
        yield
    finally:
        _state.record = prev


@contextlib.contextmanager
def _set_record(flag):
    prev = _recording()
    _state.record = flag
    try:
        yield
    finally:
        _state.record = prev


class Tensor:
    """A node in the computation graph holding a float64 array."""

    __slots__ = ("data", "requires_grad", "parents", "id", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, parents=()):
        self.data = data
        self.requires_grad = requires_grad
        self.parents = parents
        self.id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.item())

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, cols):
        return slice_cols(self, cols)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


def tensor(data, requires_grad=False):
    """Wrap array-like data as a float64 tensor."""
    arr = np.array(data, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise NonFiniteError("tensor")
    return Tensor(arr, requires_grad=requires_grad)


def constant(data):
    if isinstance(data, Tensor):
        return data
    return Tensor(np.asarray(data, dtype=np.float64))


def _make(op, value, parents):
    """Create the output node; parents is a sequence of (Tensor, vjp)."""
    if not np.isfinite(value).all():
        raise NonFiniteError(op)
    if _recording():
        live = tuple((p, f) for p, f in parents if p.requires_grad)
        if live:
            return Tensor(value, True, live)
    return Tensor(value)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverses numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = sum_(g, axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = sum_(g, axis=ax, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = constant(a), constant(b)
    _check_broadcast("add", a, b)
    return _make(
        "add",
        a.data + b.data,
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))],
    )


def sub(a, b):
    a, b = constant(a), constant(b)
    _check_broadcast("sub", a, b)
    return _make(
        "sub",
        a.data - b.data,
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(-g, b.shape))],
    )


def mul(a, b):
    a, b = constant(a), constant(b)
    _check_broadcast("mul", a, b)
    return _make(
        "mul",
        a.data * b.data,
        [(a, lambda g: _unbroadcast(g * b, a.shape)), (b, lambda g: _unbroadcast(g * a, b.shape))],
    )


def div(a, b):
    a, b = constant(a), constant(b)
    _check_broadcast("div", a, b)
    return _make(
        "div",
        a.data / b.data,
        [
            (a, lambda g: _unbroadcast(g / b, a.shape)),
            (b, lambda g: _unbroadcast(-g * a / (b * b), b.shape)),
        ],
    )


def neg(a):
    return _make("neg", -a.data, [(a, lambda g: -g)])


def power(a, exponent):
    """Elementwise power with a constant real exponent."""
    exponent = float(exponent)
    return _make(
        "power",
        a.data**exponent,
        [(a, lambda g: g * (exponent * a ** (exponent - 1.0)))],
    )


def relu(a):
    # derivative at exactly 0 is taken as 0
    mask = (a.data > 0).astype(np.float64)
    return _make("relu", a.data * mask, [(a, lambda g: g * mask)])


def exp(a):
    a = constant(a)
    out = None

    def vjp(g):
        return g * out

    with np.errstate(over="ignore"):
        out = _make("exp", np.exp(a.data), [(a, vjp)])
    return out


def log(a):
    a = constant(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.log(a.data)
    return _make("log", value, [(a, lambda g: g / a)])


def sqrt(a):
    out = None

    def vjp(g):
        return g * 0.5 / out

    with np.errstate(invalid="ignore"):
        out = _make("sqrt", np.sqrt(a.data), [(a, vjp)])
    return out


# ---------------------------------------------------------------------------
# shape and reductions


def sum_(a, axis=None, keepdims=False):
    a = constant(a)
    value = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = reshape(g, np.expand_dims(g.data, axis).shape)
        return broadcast_to(g, shape)

    return _make("sum", np.asarray(value, dtype=np.float64), [(a, vjp)])


def mean(a, axis=None):
    n = a.data.size if axis is None else a.shape[axis]
    if n == 0:
        raise ShapeError("mean", a.shape)
    return sum_(a, axis) * (1.0 / n)


def broadcast_to(a, shape):
    shape = tuple(shape)
    src = a.shape
    return _make(
        "broadcast_to",
        np.broadcast_to(a.data, shape).copy(),
        [(a, lambda g: _unbroadcast(g, src))],
    )


def reshape(a, shape):
    src = a.shape
    try:
        value = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", src, shape) from None
    return _make("reshape", value, [(a, lambda g: reshape(g, src))])


def transpose(a):
    if a.ndim != 2:
        raise ShapeError("transpose", a.shape)
    return _make("transpose", a.data.T, [(a, lambda g: transpose(g))])


def matmul(a, b):
    a, b = constant(a), constant(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return _make(
        "matmul",
        a.data @ b.data,
        [(a, lambda g: matmul(g, transpose(b))), (b, lambda g: matmul(transpose(a), g))],
    )


def concat(parts):
    """Concatenate 2-D tensors along columns."""
    parts = [constant(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.ndim != 2 for p in parts):
        raise ShapeError("concat", *(p.shape for p in parts))
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    value = np.concatenate([p.data for p in parts], axis=1)

    def piece(lo, hi):
        return lambda g: slice_cols(g, slice(lo, hi))

    return _make(
        "concat",
        value,
        [(p, piece(int(lo), int(hi))) for p, lo, hi in zip(parts, bounds[:-1], bounds[1:])],
    )


def slice_cols(a, cols):
    """Select a contiguous column range of a 2-D tensor."""
    if a.ndim != 2 or not isinstance(cols, slice):
        raise ShapeError("slice", a.shape)
    lo, hi, step = cols.indices(a.shape[1])
    if step != 1:
        raise ShapeError("slice", a.shape)
    n = a.shape[1]

    def vjp(g):
        parts = []
        if lo > 0:
            parts.append(Tensor(np.zeros((g.shape[0], lo))))
        parts.append(g)
        if hi < n:
            parts.append(Tensor(np.zeros((g.shape[0], n - hi))))
        return concat(parts) if len(parts) > 1 else g

    return _make("slice", a.data[:, lo:hi], [(a, vjp)])


def flatten_cat(parts):
    """Flatten each tensor row-major and concatenate into one vector."""
    flat = [reshape(p, (p.data.size,)) for p in parts]
    sizes = np.cumsum([0] + [f.shape[0] for f in flat])
    value = np.concatenate([f.data for f in flat]) if flat else np.zeros(0)

    def piece(lo, hi):
        return lambda g: vec_slice(g, lo, hi)

    return _make(
        "flatten_cat",
        value,
        [(f, piece(int(lo), int(hi))) for f, lo, hi in zip(flat, sizes[:-1], sizes[1:])],
    )


def vec_slice(a, lo, hi):
    n = a.shape[0]

    def vjp(g):
        pad = np.zeros(n)
        out = flatten_cat([Tensor(pad[:lo]), g, Tensor(pad[hi:])])
        return out

    return _make("vec_slice", a.data[lo:hi], [(a, vjp)])


# ---------------------------------------------------------------------------
# composite ops


def softmax(a, axis=1):
    """Row softmax, computed with max-subtraction."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s_val = e / e.sum(axis=axis, keepdims=True)
    out = None

    def vjp(g):
        return out * (g - sum_(g * out, axis=axis, keepdims=True))

    out = _make("softmax", s_val, [(a, vjp)])
    return out


def log_softmax(a, axis=1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def vjp(g):
        return g - softmax(a, axis) * sum_(g, axis=axis, keepdims=True)

    return _make("log_softmax", shifted - lse, [(a, vjp)])


def dot(a, b):
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError("dot", a.shape, b.shape)
    return sum_(a * b)


def norm2(a, eps=0.0):
    """Euclidean norm of all entries; gradient at the origin is 0."""
    value = np.sqrt(np.sum(a.data * a.data))
    out = None

    def vjp(g):
        if out.data <= eps:
            return Tensor(np.zeros(a.shape))
        return g * a / out

    out = _make("norm2", np.asarray(value), [(a, vjp)])
    return out


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for parent, _ in node.parents:
            if parent.id not in seen:
                stack.append((parent, False))
    return order


def grad(output, wrt, create_graph=False, grad_output=None):
    """Return d(output)/d(w) for every ``w`` in ``wrt``.

    ``output`` must be scalar unless ``grad_output`` is supplied.  Inputs not
    connected to ``output`` receive exact zeros.  With ``create_graph`` the
    returned tensors are differentiable nodes.
    """
    single = isinstance(wrt, Tensor)
    targets = [wrt] if single else list(wrt)
    if grad_output is None:
        if output.data.size != 1:
            raise ShapeError("grad (non-scalar output)", output.shape)
        seed = Tensor(np.ones_like(output.data))
    else:
        seed = constant(grad_output)

    grads = {}
    if output.requires_grad:
        grads[output.id] = seed
        order = _toposort(output)
        target_ids = {t.id for t in targets}
        # only propagate along edges that can reach a requested target
        relevant = set(target_ids)
        for node in order:
            if any(p.id in relevant for p, _ in node.parents):
                relevant.add(node.id)
        with _set_record(create_graph):
            for node in reversed(order):
                g = grads.pop(node.id, None) if node.parents else grads.get(node.id)
                if g is None:
                    continue
                if node.parents:
                    if node.id in target_ids:
                        grads[node.id] = g
                    for parent, vjp in node.parents:
                        if parent.id not in relevant:
                            continue
                        contrib = vjp(g)
                        prev = grads.get(parent.id)
                        grads[parent.id] = contrib if prev is None else prev + contrib
    elif any(output is t for t in targets):
        grads[output.id] = seed

    result = []
    for t in targets:
        g = grads.get(t.id)
        if g is None:
            g = Tensor(np.zeros(t.shape))
        elif not create_graph:
            g = Tensor(g.data)
        result.append(g)
    return result[0] if single else result
