"""Shared oracles for the test suite."""

import numpy as np

from fedara import autodiff as ad


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def _pos(rng, shape):
    return rng.uniform(0.5, 2.0, size=shape)


def _any(rng, shape):
    return rng.standard_normal(shape)


def _away_from_zero(rng, shape):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < 0.1, 0.5, x)


def _vector(rng, shape):
    return rng.standard_normal(6)


# name -> (function of tensors, list of input factories)
PRIMITIVES = {
    "add": (lambda a, b: a + b, [_any, _any]),
    "add_broadcast_row": (lambda a, b: a + b, [_any, lambda r, s: r.standard_normal((1, s[1]))]),
    "sub": (lambda a, b: a - b, [_any, _any]),
    "mul": (lambda a, b: a * b, [_any, _any]),
    "div": (lambda a, b: a / b, [_any, _pos]),
    "neg": (lambda a: -a, [_any]),
    "power": (lambda a: a**3, [_any]),
    "relu": (lambda a: ad.relu(a), [_away_from_zero]),
    "exp": (lambda a: ad.exp(a), [_any]),
    "log": (lambda a: ad.log(a), [_pos]),
    "sqrt": (lambda a: ad.sqrt(a), [_pos]),
    "sum_axis0": (lambda a: ad.sum_(a, axis=0), [_any]),
    "sum_axis1_keep": (lambda a: ad.sum_(a, axis=1, keepdims=True), [_any]),
    "mean": (lambda a: ad.mean(a, axis=1), [_any]),
    "transpose": (lambda a: ad.transpose(a), [_any]),
    "reshape": (lambda a: ad.reshape(a, (-1,)), [_any]),
    "softmax": (lambda a: ad.softmax(a, axis=1), [_any]),
    "log_softmax": (lambda a: ad.log_softmax(a, axis=1), [_any]),
    "slice_cols": (lambda a: a[1:3], [_any]),
    "concat": (lambda a, b: ad.concat([a, b]), [_any, _any]),
    "broadcast_to": (lambda a: ad.broadcast_to(a, (4, 3)), [lambda r, s: r.standard_normal((1, 3))]),
    "matmul": (lambda a, b: a @ b, [_any, lambda r, s: r.standard_normal((s[1], 2))]),
    "dot": (lambda a, b: ad.dot(a, b), [_vector, _vector]),
    "norm2": (lambda a: ad.norm2(a), [_any]),
    "flatten_cat": (lambda a, b: ad.flatten_cat([a, b]), [_any, _vector]),
    "vec_slice": (lambda a: ad.vec_slice(a, 2, 5), [_vector]),
}


def _case_inputs(name, seed):
    rng = np.random.default_rng(seed)
    shape = (4, 3) if name != "slice_cols" else (4, 5)
    _, makers = PRIMITIVES[name]
    return [maker(rng, shape) for maker in makers]


def _weighted(fn, arrays, weights_seed):
    """Scalar function sum(fn(...) * R) with fixed random R."""
    with ad.no_grad():
        out_shape = fn(*[ad.Tensor(a) for a in arrays]).shape
    R = np.random.default_rng(weights_seed).standard_normal(out_shape)

    def scalar(*tensors):
        return ad.sum_(fn(*tensors) * ad.constant(R))

    return scalar


def primitive_error(name, seed):
    """Relative error of the autodiff gradient of one primitive vs central differences."""
    fn, _ = PRIMITIVES[name]
    arrays = _case_inputs(name, seed)
    scalar = _weighted(fn, arrays, seed + 1000)
    tensors = [ad.tensor(a, requires_grad=True) for a in arrays]
    grads = ad.grad(scalar(*tensors), tensors)
    worst = 0.0
    for i, g in enumerate(grads):

        def f(x, i=i):
            args = [ad.Tensor(x if j == i else arrays[j]) for j in range(len(arrays))]
            return scalar(*args).item()

        worst = max(worst, rel_err(g.data, central_diff(f, arrays[i])))
    return worst
