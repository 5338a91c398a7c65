"""Minimal reverse-mode differentiation over dense 2-d arrays.

Every value flowing through a model is a :class:`Var`.  Operations build a
graph of parents and closures; :func:`backward` walks it in reverse
topological order and accumulates ``.grad`` on every node that requires it.

Only the handful of primitives needed by the graph models and the
two-sample classifiers live here.  All arithmetic is float64.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Sequence

import numpy as np
import scipy.sparse as sp

PROB_CLAMP = 1e-7

# Sign patterns of rectifier inputs, collected only while a gradient check
# is probing the function (see ``gradcheck``).
_kink_log: list[np.ndarray] | None = None


class ShapeError(ValueError):
    pass


class Var:
    """A node in the computation graph."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, value, parents: Sequence["Var"] = (), backward=None,
                 requires_grad: bool | None = None, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = tuple(parents)
        self._backward = backward
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self._parents)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Var{tag}(shape={self.value.shape})"

    def item(self) -> float:
        return float(self.value)

    # operator sugar keeps loss code readable
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def param(value, name: str | None = None) -> Var:
    """Leaf that gradients are accumulated into."""
    return Var(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def const(value) -> Var:
    if isinstance(value, Var):
        return value
    return Var(value, requires_grad=False)


def detach(x: Var) -> Var:
    return Var(x.value.copy(), requires_grad=False)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Var:
    a, b = const(a), const(b)
    _check_broadcast("add", a.value, b.value)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Var(a.value + b.value, (a, b), back)


def sub(a, b) -> Var:
    a, b = const(a), const(b)
    _check_broadcast("sub", a.value, b.value)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Var(a.value - b.value, (a, b), back)


def mul(a, b) -> Var:
    a, b = const(a), const(b)
    _check_broadcast("mul", a.value, b.value)

    def back(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return Var(a.value * b.value, (a, b), back)


def div(a, b) -> Var:
    a, b = const(a), const(b)
    _check_broadcast("div", a.value, b.value)
    out = a.value / b.value

    def back(g):
        return (_unbroadcast(g / b.value, a.shape),
                _unbroadcast(-g * out / b.value, b.shape))

    return Var(out, (a, b), back)


def square(x: Var) -> Var:
    return mul(x, x)


def add_bias(x: Var, b: Var) -> Var:
    if b.value.ndim != 2 or b.shape[0] != 1 or b.shape[1] != x.shape[1]:
        raise ShapeError(f"add_bias: bias {b.shape} does not fit input {x.shape}")
    return add(x, b)


def relu(x: Var) -> Var:
    mask = x.value > 0
    if _kink_log is not None:
        _kink_log.append(mask)

    def back(g):
        return (g * mask,)

    return Var(x.value * mask, (x,), back)


def sigmoid(x: Var) -> Var:
    z = x.value
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)

    def back(g):
        return (g * out * (1.0 - out),)

    return Var(out, (x,), back)


def softmax_rows(x: Var) -> Var:
    z = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return Var(out, (x,), back)


def dropout(x: Var, mask: np.ndarray) -> Var:
    """Multiply by a precomputed (already rescaled) mask."""
    return mul(x, const(mask))


# ------------------------------------------------------------------- linear

def matmul(a, b) -> Var:
    a, b = const(a), const(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        return g @ b.value.T, a.value.T @ g

    return Var(a.value @ b.value, (a, b), back)


def sparse_matmul(adj: sp.spmatrix, x) -> Var:
    """``adj @ x`` with a constant sparse left operand."""
    x = const(x)
    if adj.shape[1] != x.shape[0]:
        raise ShapeError(f"sparse_matmul: incompatible shapes {adj.shape} and {x.shape}")
    adj_t = adj.T.tocsr()

    def back(g):
        return (np.asarray(adj_t @ g),)

    return Var(np.asarray(adj @ x.value), (x,), back)


def concat_cols(parts: Sequence) -> Var:
    parts = [const(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def back(g):
        return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return Var(np.concatenate([p.value for p in parts], axis=1), parts, back)


def take_rows(x: Var, idx) -> Var:
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        out = np.zeros_like(x.value)
        np.add.at(out, idx, g)
        return (out,)

    return Var(x.value[idx], (x,), back)


def transpose(x: Var) -> Var:
    return Var(x.value.T, (x,), lambda g: (g.T,))


# --------------------------------------------------------------- reductions

def sum_all(x: Var) -> Var:
    return Var(x.value.sum(), (x,), lambda g: (np.full_like(x.value, g),))


def mean_all(x: Var) -> Var:
    n = x.value.size
    return Var(x.value.mean(), (x,), lambda g: (np.full_like(x.value, g / n),))


def mean_rows(x: Var) -> Var:
    """Column means as a 1×c row."""
    n = x.shape[0]
    return Var(x.value.mean(axis=0, keepdims=True), (x,),
               lambda g: (np.broadcast_to(g / n, x.shape).copy(),))


# ------------------------------------------------------------------- losses

def loss_bce(pred, target) -> Var:
    """Mean binary cross-entropy of probabilities, clamped away from 0 and 1."""
    pred = const(pred)
    t = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    p = np.clip(pred.value, PROB_CLAMP, 1.0 - PROB_CLAMP)
    inside = (pred.value > PROB_CLAMP) & (pred.value < 1.0 - PROB_CLAMP)
    n = p.size
    val = -np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p))

    def back(g):
        dp = (-(t / p) + (1.0 - t) / (1.0 - p)) / n
        return (g * dp * inside,)

    return Var(val, (pred,), back)


def loss_cce(logits, target) -> Var:
    """Mean negative log-softmax probability of the target column."""
    logits = const(logits)
    target = np.asarray(target, dtype=np.int64)
    n, k = logits.shape
    if target.shape != (n,):
        raise ShapeError(f"loss_cce: target {target.shape} for logits {logits.shape}")
    if target.size and (target.min() < 0 or target.max() >= k):
        raise ValueError(f"loss_cce: target index outside [0, {k})")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logz
    rows = np.arange(n)
    val = -logp[rows, target].mean()

    def back(g):
        d = np.exp(logp)
        d[rows, target] -= 1.0
        return (g * d / n,)

    return Var(val, (logits,), back)


# ----------------------------------------------------------------- backward

def _topo(root: Var) -> list[Var]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Var) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every leaf parameter.

    Gradients of shared leaves are summed over every use.  Interior nodes get
    their ``.grad`` overwritten; leaves accumulate, so call ``zero_grad`` on
    the parameter collection between steps.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg


@contextmanager
def record_kinks():
    """Collect rectifier sign masks produced during the enclosed forward."""
    global _kink_log
    saved, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = saved

