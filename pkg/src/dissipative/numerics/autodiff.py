"""Reverse-mode differentiation over numpy arrays.

A :class:`Tape` records every operation applied to its :class:`Var` objects
in creation order, which is already a topological order. :func:`backward`
sweeps the record once in reverse, accumulating adjoints.

Every op in this module accepts plain numpy values as well as ``Var``; when no
argument lives on a tape the op just returns the numpy result. Model code can
therefore be written once and run either detached (fast path) or recorded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .linalg import lu_solve


@dataclass
class Node:
    value: np.ndarray
    op: str
    parents: tuple[int, ...] = ()
    vjps: tuple[Callable[[np.ndarray], np.ndarray], ...] = ()


@dataclass
class Tape:
    """Single-writer record of operations (parents always precede children)."""

    nodes: list[Node] = field(default_factory=list)

    def var(self, value) -> "Var":
        """Register a leaf."""
        self.nodes.append(Node(np.array(value, dtype=float), "leaf"))
        return Var(self, len(self.nodes) - 1)

    def record(self, value, op: str, parents: Sequence["Var"], vjps) -> "Var":
        for p in parents:
            if p.tape is not self:
                raise ValueError("cannot mix variables from different tapes")
        self.nodes.append(
            Node(np.asarray(value, dtype=float), op, tuple(p.index for p in parents), tuple(vjps))
        )
        return Var(self, len(self.nodes) - 1)

    def __len__(self):
        return len(self.nodes)


class Var:
    __slots__ = ("tape", "index")
    # make numpy defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    def __repr__(self):
        return f"Var(#{self.index}, {self.tape.nodes[self.index].op}, shape={self.shape})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return mean(self, axis=axis)


def value(x) -> np.ndarray:
    """The numeric value of a Var or array-like."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _tape_of(args) -> Tape | None:
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _op(name, out, args, vjps):
    """Record ``out`` on the tape of any Var in ``args``; plain result otherwise."""
    tape = _tape_of(args)
    if tape is None:
        return out
    parents, fns = [], []
    for a, fn in zip(args, vjps):
        if isinstance(a, Var) and fn is not None:
            parents.append(a)
            fns.append(fn)
    return tape.record(out, name, parents, fns)


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    av, bv = value(a), value(b)
    return _op("add", av + bv, (a, b), (
        lambda g: _unbroadcast(g, av.shape),
        lambda g: _unbroadcast(g, bv.shape),
    ))


def sub(a, b):
    av, bv = value(a), value(b)
    return _op("sub", av - bv, (a, b), (
        lambda g: _unbroadcast(g, av.shape),
        lambda g: _unbroadcast(-g, bv.shape),
    ))


def mul(a, b):
    av, bv = value(a), value(b)
    return _op("mul", av * bv, (a, b), (
        lambda g: _unbroadcast(g * bv, av.shape),
        lambda g: _unbroadcast(g * av, bv.shape),
    ))


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    return _op("div", out, (a, b), (
        lambda g: _unbroadcast(g / bv, av.shape),
        lambda g: _unbroadcast(-g * out / bv, bv.shape),
    ))


def neg(a):
    return _op("neg", -value(a), (a,), (lambda g: -g,))


def power(a, p: float):
    av = value(a)
    return _op("pow", av**p, (a,), (lambda g: g * p * av ** (p - 1),))


def square(a):
    av = value(a)
    return _op("square", av * av, (a,), (lambda g: 2.0 * g * av,))


def sqrt(a):
    out = np.sqrt(value(a))
    return _op("sqrt", out, (a,), (lambda g: 0.5 * g / out,))


def exp(a):
    out = np.exp(value(a))
    return _op("exp", out, (a,), (lambda g: g * out,))


def log(a):
    av = value(a)
    return _op("log", np.log(av), (a,), (lambda g: g / av,))


def maximum(a, b):
    """Elementwise max; ties route the gradient to ``a``."""
    av, bv = value(a), value(b)
    pick = av >= bv
    return _op("maximum", np.maximum(av, bv), (a, b), (
        lambda g: _unbroadcast(g * pick, av.shape),
        lambda g: _unbroadcast(g * ~pick, bv.shape),
    ))


# ---------------------------------------------------------------- activations


def tanh(a):
    out = np.tanh(value(a))
    return _op("tanh", out, (a,), (lambda g: g * (1.0 - out * out),))


def sigmoid(a):
    av = value(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * av))
    return _op("sigmoid", out, (a,), (lambda g: g * out * (1.0 - out),))


def relu(a):
    av = value(a)
    mask = av > 0
    return _op("relu", np.where(mask, av, 0.0), (a,), (lambda g: g * mask,))


def step(a):
    """Heaviside step (derivative of ReLU, 0 at 0); carries no gradient."""
    return (value(a) > 0).astype(float)


# ---------------------------------------------------------------- shapes and reductions


def sum_(a, axis=None, keepdims=False):
    av = value(a)
    out = av.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _op("sum", out, (a,), (vjp,))


def mean(a, axis=None):
    av = value(a)
    n = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis=axis) / float(n)


def reshape(a, shape):
    av = value(a)
    return _op("reshape", av.reshape(shape), (a,), (lambda g: np.reshape(g, av.shape),))


def swapaxes(a, i, j):
    return _op("swapaxes", np.swapaxes(value(a), i, j), (a,), (lambda g: np.swapaxes(g, i, j),))


def getitem(a, idx):
    av = value(a)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return out

    return _op("getitem", av[idx], (a,), (vjp,))


def stack(items, axis=0):
    vals = [value(x) for x in items]
    out = np.stack(vals, axis=axis)
    vjps = [(lambda g, k=k: np.take(g, k, axis=axis)) for k in range(len(items))]
    return _op("stack", out, tuple(items), vjps)


def concatenate(items, axis=0):
    vals = [value(x) for x in items]
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])
    vjps = [
        (lambda g, lo=lo, hi=hi: np.take(g, np.arange(lo, hi), axis=axis))
        for lo, hi in zip(bounds[:-1], bounds[1:])
    ]
    return _op("concatenate", np.concatenate(vals, axis=axis), tuple(items), vjps)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    """``np.matmul`` semantics for operands with ndim >= 2."""
    av, bv = value(a), value(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ValueError("matmul on the tape needs operands with ndim >= 2")
    return _op("matmul", av @ bv, (a, b), (
        lambda g: _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape),
        lambda g: _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape),
    ))


def solve(a, b):
    """Batched ``a^{-1} b`` for square ``a`` (..., d, d) and ``b`` (..., d, k)."""
    av, bv = value(a), value(b)
    av_b = np.broadcast_to(av, bv.shape[:-2] + av.shape[-2:]) if av.ndim < bv.ndim else av
    x = lu_solve(av_b, bv)

    def vjp_b(g):
        return _unbroadcast(lu_solve(np.swapaxes(av_b, -1, -2), g), bv.shape)

    def vjp_a(g):
        gb = lu_solve(np.swapaxes(av_b, -1, -2), g)
        return _unbroadcast(-gb @ np.swapaxes(x, -1, -2), av.shape)

    return _op("solve", x, (a, b), (vjp_a, vjp_b))


# ---------------------------------------------------------------- custom ops


def custom(name: str, out, inputs: Sequence, vjp: Callable[[np.ndarray], Sequence]):
    """Record an op with a hand-written joint VJP ``g -> grads for inputs``.

    The joint VJP is evaluated once and shared between parents.
    """
    cache = {}

    def part(k):
        def fn(g):
            key = id(g)
            if key not in cache:
                cache.clear()
                cache[key] = (g, vjp(g))
            return cache[key][1][k]
        return fn

    return _op(name, out, tuple(inputs), [part(k) for k in range(len(inputs))])


# ---------------------------------------------------------------- backward


class Gradients:
    """Adjoints of an output w.r.t. tape nodes, looked up by Var."""

    def __init__(self, adjoints: list, tape: Tape):
        self._adj = adjoints
        self._tape = tape

    def __getitem__(self, v: Var) -> np.ndarray:
        g = self._adj[v.index]
        if g is None:
            return np.zeros_like(v.value)
        return np.broadcast_to(g, v.value.shape).astype(float)

    def __contains__(self, v: Var) -> bool:
        return self._adj[v.index] is not None


def backward(output: Var) -> Gradients:
    """Reverse sweep from a scalar ``output``."""
    if not isinstance(output, Var):
        raise TypeError("backward needs a Var")
    if output.value.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    tape = output.tape
    adj: list = [None] * (output.index + 1)
    adj[output.index] = np.ones_like(output.value)
    for i in range(output.index, -1, -1):
        g = adj[i]
        if g is None:
            continue
        node = tape.nodes[i]
        for p, fn in zip(node.parents, node.vjps):
            contrib = fn(g)
            adj[p] = contrib if adj[p] is None else adj[p] + contrib
    return Gradients(adj, tape)


def finite_difference_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    """Central differences ``(f(x + h e_i) - f(x - h e_i)) / 2h`` for each coordinate."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=float)
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(f(x))
        flat[i] = old - h
        fm = float(f(x))
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad
