"""Minimal reverse-mode differentiation over numpy arrays.

Only the handful of operations the recommender network needs are provided.
Each :class:`Var` remembers its parents and a closure that pushes its
gradient back to them; :meth:`Var.backward` runs those closures in reverse
topological order. All arithmetic is float64 and every reduction has a fixed
order, so a forward/backward pass is bit-reproducible.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


class Var:
    __slots__ = ("value", "grad", "_parents", "_backward", "name")

    def __init__(self, value, parents: tuple["Var", ...] = (), backward: Callable | None = None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape}, name={self.name})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Back-propagate from a scalar output."""
        if self.value.size != 1:
            raise ValueError("backward() needs a scalar output")
        order: list[Var] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            v, expanded = stack.pop()
            if expanded:
                order.append(v)
                continue
            if id(v) in seen:
                continue
            seen.add(id(v))
            stack.append((v, True))
            for p in v._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for v in reversed(order):
            if v._backward is not None and v.grad is not None:
                v._backward(v.grad)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0) if isinstance(other, Var) else -np.asarray(other))

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def const(x) -> Var:
    return Var(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def add(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    out = Var(a.value + b.value, (a, b))

    def back(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    out._backward = back
    return out


def add_n(terms: Sequence[Var]) -> Var:
    """Left-to-right sum of equally shaped terms."""
    terms = list(terms)
    value = terms[0].value.copy()
    for t in terms[1:]:
        value += t.value
    out = Var(value, tuple(terms))

    def back(g):
        for t in terms:
            t._accumulate(g)

    out._backward = back
    return out


def scale(a: Var, c) -> Var:
    """Multiply by a constant (scalar or broadcastable array)."""
    c = np.asarray(c, dtype=np.float64)
    out = Var(a.value * c, (a,))
    out._backward = lambda g: a._accumulate(_unbroadcast(g * c, a.shape))
    return out


def mul(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    out = Var(a.value * b.value, (a, b))

    def back(g):
        a._accumulate(_unbroadcast(g * b.value, a.shape))
        b._accumulate(_unbroadcast(g * a.value, b.shape))

    out._backward = back
    return out


def matmul(a: Var, b: Var) -> Var:
    out = Var(a.value @ b.value, (a, b))

    def back(g):
        av, bv = a.value, b.value
        if av.ndim == 1:
            a._accumulate(g @ bv.T)
            b._accumulate(np.outer(av, g))
        elif bv.ndim == 1:
            a._accumulate(np.outer(g, bv))
            b._accumulate(av.T @ g)
        else:
            a._accumulate(g @ bv.T)
            b._accumulate(av.T @ g)

    out._backward = back
    return out


def relu(a: Var) -> Var:
    mask = a.value > 0
    out = Var(np.where(mask, a.value, 0.0), (a,))
    out._backward = lambda g: a._accumulate(g * mask)
    return out


def leaky_relu(a: Var, slope: float = 0.2) -> Var:
    factor = np.where(a.value > 0, 1.0, slope)
    out = Var(a.value * factor, (a,))
    out._backward = lambda g: a._accumulate(g * factor)
    return out


def sigmoid(a: Var) -> Var:
    x = a.value
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = Var(s, (a,))
    out._backward = lambda g: a._accumulate(g * s * (1.0 - s))
    return out


def square(a: Var) -> Var:
    out = Var(a.value * a.value, (a,))
    out._backward = lambda g: a._accumulate(2.0 * g * a.value)
    return out


def total(a: Var) -> Var:
    out = Var(np.sum(a.value), (a,))
    out._backward = lambda g: a._accumulate(np.broadcast_to(g, a.shape))
    return out


def concat(parts: Sequence[Var], axis: int = -1) -> Var:
    parts = list(parts)
    out = Var(np.concatenate([p.value for p in parts], axis=axis), tuple(parts))
    sizes = np.cumsum([p.value.shape[axis] for p in parts])[:-1]

    def back(g):
        for p, gp in zip(parts, np.split(g, sizes, axis=axis)):
            p._accumulate(gp)

    out._backward = back
    return out


def scatter_matrix(idx: np.ndarray, n: int) -> sp.csr_matrix:
    """Sparse (n x len(idx)) matrix that sums rows into ``idx`` buckets.

    Building it once and reusing it for several scatters of the same index
    is much cheaper than ``np.add.at``.
    """
    idx = np.asarray(idx, dtype=np.int64)
    return sp.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))), shape=(n, len(idx)))


def scatter_add(idx: np.ndarray, values: np.ndarray, n: int, plan: sp.csr_matrix | None = None) -> np.ndarray:
    """``out[idx[j]] += values[j]`` into a fresh ``n``-row array, fixed summation order."""
    if plan is not None:
        return np.asarray(plan @ values)
    if values.ndim == 1:
        return np.bincount(idx, weights=values, minlength=n)
    width = int(np.prod(values.shape[1:]))
    flat = (np.asarray(idx, np.int64)[:, None] * width + np.arange(width)).ravel()
    out = np.bincount(flat, weights=values.reshape(-1), minlength=n * width)
    return out.reshape((n,) + values.shape[1:])


def take_rows(a: Var, idx: np.ndarray, plan: sp.csr_matrix | None = None) -> Var:
    """``a[idx]`` along the first axis (embedding lookup / gather).

    ``plan`` is an optional :func:`scatter_matrix` for ``idx`` used by the
    backward pass.
    """
    idx = np.asarray(idx, dtype=np.int64)
    out = Var(a.value[idx], (a,))
    out._backward = lambda g: a._accumulate(scatter_add(idx, g, a.shape[0], plan))
    return out


def segment_sum(values: Var, seg: np.ndarray, n: int, plan: sp.csr_matrix | None = None) -> Var:
    """Rows of ``values`` summed into ``n`` buckets given by ``seg``."""
    seg = np.asarray(seg, dtype=np.int64)
    out = Var(scatter_add(seg, values.value, n, plan), (values,))
    out._backward = lambda g: values._accumulate(g[seg])
    return out


def segment_softmax(scores: Var, seg: np.ndarray, n: int) -> Var:
    """Softmax of a 1-d score vector within each segment."""
    seg = np.asarray(seg, dtype=np.int64)
    s = scores.value
    peak = np.full(n, -np.inf)
    np.maximum.at(peak, seg, s)
    e = np.exp(s - peak[seg])
    z = np.bincount(seg, weights=e, minlength=n)
    alpha = e / z[seg]
    out = Var(alpha, (scores,))

    def back(g):
        inner = np.bincount(seg, weights=alpha * g, minlength=n)
        scores._accumulate(alpha * (g - inner[seg]))

    out._backward = back
    return out


def spmm(m: sp.spmatrix, x: Var) -> Var:
    """Constant sparse matrix times ``x``."""
    m = sp.csr_matrix(m)
    out = Var(np.asarray(m @ x.value), (x,))
    out._backward = lambda g: x._accumulate(np.asarray(m.T @ g))
    return out
