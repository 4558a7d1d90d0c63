"""First- and quasi-second-order optimizers over flat float64 vectors."""

from __future__ import annotations

from collections import deque

import numpy as np

from .errors import DivergenceError


def _check(grad, where=None):
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient", where)


class SGD:
    """Plain SGD: no momentum, no weight decay."""

    kind = "sgd"

    def __init__(self, lr=0.01):
        self.lr = lr

    def step(self, x, grad):
        _check(grad)
        return x - self.lr * grad


class Adam:
    """Bias-corrected Adam.  ``step`` descends; negate the gradient to ascend."""

    kind = "adam"

    def __init__(self, lr=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, x, grad):
        _check(grad, self.t + 1)
        if self.m is None:
            self.m = np.zeros_like(x)
            self.v = np.zeros_like(x)
        if self.m.shape != np.shape(x):
            raise ValueError(f"Adam state shape {self.m.shape} != {np.shape(x)}")
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return x - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class LBFGS:
    """L-BFGS with two-loop recursion and Armijo backtracking.

    ``fun(x)`` must return ``(value, gradient)``.  Call :meth:`step`
    repeatedly or use :meth:`minimize`.
    """

    kind = "lbfgs"

    def __init__(self, history=10, c1=1e-4, backtrack=0.5, max_backtracks=30):
        self.history = history
        self.c1 = c1
        self.backtrack = backtrack
        self.max_backtracks = max_backtracks
        self.pairs = deque(maxlen=history)

    def direction(self, g):
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(self.pairs):
            a = rho * s.dot(q)
            alphas.append(a)
            q -= a * y
        if self.pairs:
            s, y, _ = self.pairs[-1]
            q *= s.dot(y) / y.dot(y)
        else:
            q *= min(1.0, 1.0 / max(np.linalg.norm(g), 1e-300))
        for (s, y, rho), a in zip(self.pairs, reversed(alphas)):
            b = rho * y.dot(q)
            q += (a - b) * s
        return -q

    def step(self, fun, x, f, g):
        """One iteration.  Returns ``(x, f, g, accepted)``.

        On a failed line search the point is left unchanged and the history
        is cleared.
        """
        _check(g)
        d = self.direction(g)
        slope = g.dot(d)
        if slope >= 0:
            self.pairs.clear()
            d = -g
            slope = -g.dot(g)
        step = 1.0
        for _ in range(self.max_backtracks):
            x_new = x + step * d
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + self.c1 * step * slope:
                break
            step *= self.backtrack
        else:
            self.pairs.clear()
            return x, f, g, False
        _check(g_new)
        s = x_new - x
        y = g_new - g
        sy = s.dot(y)
        if sy > 1e-12 * max(1.0, y.dot(y)):
            self.pairs.append((s, y, 1.0 / sy))
        return x_new, f_new, g_new, True

    def minimize(self, fun, x0, max_iter=100, gtol=1e-10, callback=None):
        """Run until the gradient norm drops below ``gtol`` or no progress.

        Returns ``(x, f, trace)`` with ``trace`` the objective per accepted step.
        """
        x = np.asarray(x0, dtype=np.float64).copy()
        f, g = fun(x)
        trace = [f]
        for it in range(max_iter):
            if np.linalg.norm(g) <= gtol:
                break
            x, f, g, ok = self.step(fun, x, f, g)
            if not ok:
                # retry once from steepest descent before giving up
                x, f, g, ok = self.step(fun, x, f, g)
                if not ok:
                    break
            trace.append(f)
            if callback is not None:
                callback(it, x, f)
        return x, f, trace
