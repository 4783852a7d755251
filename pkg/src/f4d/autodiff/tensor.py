"""Reverse-mode automatic differentiation over dense float64 arrays.

Tensors wrap numpy arrays. Every primitive op records its parents and a
backward rule on the output tensor; the recorded DAG (the tape) is walked
once in reverse topological order by :func:`backward` / :func:`vjp`.
Recording is disabled inside a :func:`no_grad` block.

All data is float64. Gradients with respect to detached tensors
(``requires_grad=False``) are never computed or stored.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

from ..errors import InvalidInputError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Context manager that suspends graph recording."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    """Dense float64 array participating in the autodiff tape.

    ``_parents`` and ``_backward`` are set only on tensors produced by a
    recorded op; leaves have neither. ``_backward(g)`` returns one gradient
    array (or None) per parent.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data, parents, backward_fn):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# -- backward engine -------------------------------------------------------------


def _topo_order(root):
    """Reverse-traversal order of the recorded graph reachable from root.

    Iterative DFS; parents are visited in recorded order, so the result is
    deterministic for a given forward pass.
    """
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        nid = id(node)
        if nid in visited:
            continue
        visited.add(nid)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def _backprop(root, seed):
    """Walk the tape once, returning {id(tensor): grad array}."""
    grads = {id(root): seed}
    for node in reversed(_topo_order(root)):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            pid = id(p)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
    return grads


def backward(loss, seed=None):
    """Populate ``.grad`` on every requires_grad leaf reachable from loss.

    ``loss`` must be scalar unless an explicit ``seed`` gradient of the
    same shape is supplied. Gradients accumulate (+=) into ``.grad`` of
    leaf tensors (parameters and explicit inputs); interior nodes are not
    materialized.
    """
    if seed is None:
        if loss.data.size != 1:
            raise InvalidInputError(
                f"backward requires a scalar (got shape {loss.data.shape}); "
                "pass an explicit seed gradient otherwise"
            )
        seed = np.ones_like(loss.data)
    else:
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != loss.data.shape:
            raise ShapeError(f"seed shape {seed.shape} != loss shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    grads = _backprop(loss, seed)
    for node in _topo_order(loss):
        if node._backward is not None:
            continue
        g = grads.get(id(node))
        if g is None:
            continue
        if node.grad is None:
            node.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            node.grad = node.grad + g


def vjp(output, seed, wrt):
    """Vector-Jacobian product: gradients of ``seed . output`` w.r.t. ``wrt``.

    Does not touch ``.grad`` fields; returns a list aligned with ``wrt``
    (zeros for tensors the output does not depend on).
    """
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != output.data.shape:
        raise ShapeError(f"seed shape {seed.shape} != output shape {output.data.shape}")
    if not output.requires_grad:
        return [np.zeros_like(t.data) for t in wrt]
    grads = _backprop(output, seed)
    return [
        grads.get(id(t), None) if grads.get(id(t)) is not None else np.zeros_like(t.data)
        for t in wrt
    ]


# -- primitive ops -----------------------------------------------------------------


def _unbroadcast(grad, shape):
    """Sum grad down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor._from_op(data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return Tensor._from_op(data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return Tensor._from_op(data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data

    def bw(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return Tensor._from_op(data, (a, b), bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 1 or b.data.ndim < 2:
        raise ShapeError("matmul expects at least 1-d @ 2-d operands")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    data = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if a.data.ndim == 1:
            gb = np.outer(a.data, g)
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return Tensor._from_op(data, (a, b), bw)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0.0
    data = np.where(mask, x.data, 0.0)

    def bw(g):
        return (g * mask,)

    return Tensor._from_op(data, (x,), bw)


def sigmoid(x):
    x = as_tensor(x)
    d = x.data
    data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def bw(g):
        return (g * data * (1.0 - data),)

    return Tensor._from_op(data, (x,), bw)


def exp(x):
    x = as_tensor(x)
    data = np.exp(x.data)

    def bw(g):
        return (g * data,)

    return Tensor._from_op(data, (x,), bw)


def log(x):
    x = as_tensor(x)
    data = np.log(x.data)

    def bw(g):
        return (g / x.data,)

    return Tensor._from_op(data, (x,), bw)


def sqrt(x):
    x = as_tensor(x)
    data = np.sqrt(x.data)

    def bw(g):
        return (g * (0.5 / data),)

    return Tensor._from_op(data, (x,), bw)


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    _check_axis(x, axis)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        # Read-only broadcast views are safe: the engine never mutates grads.
        if axis is None:
            return (np.broadcast_to(g, x.data.shape),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, x.data.shape),)

    return Tensor._from_op(data, (x,), bw)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    _check_axis(x, axis)
    data = x.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        n = x.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([x.data.shape[a] for a in axis]))
    else:
        n = x.data.shape[axis]

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g / n, x.data.shape),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2 / n, x.data.shape),)

    return Tensor._from_op(data, (x,), bw)


def channel_norm(x, eps=1e-5):
    """Normalize over all non-channel (non-last) axes of the batch.

    Fused mean/variance normalization with the analytic backward rule;
    equivalent to composing mean, sub, mul, sqrt, and div ops.
    """
    x = as_tensor(x)
    if x.data.ndim < 2:
        raise ShapeError("channel_norm expects at least 2 dims")
    axes = tuple(range(x.data.ndim - 1))
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = xc * inv

    def bw(g):
        gm = g.mean(axis=axes, keepdims=True)
        gxn = np.mean(g * xn, axis=axes, keepdims=True)
        return (inv * (g - gm - xn * gxn),)

    return Tensor._from_op(xn, (x,), bw)


def _check_axis(x, axis):
    if axis is None:
        return
    axes = axis if isinstance(axis, tuple) else (axis,)
    for a in axes:
        if not -x.data.ndim <= a < x.data.ndim:
            raise ShapeError(f"axis {a} invalid for shape {x.data.shape}")


def max_reduce(x, axis):
    """Max along one axis; gradient flows to the first argmax per slice."""
    x = as_tensor(x)
    _check_axis(x, axis)
    data = x.data.max(axis=axis)
    idx = np.argmax(x.data, axis=axis)

    def bw(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(
            gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis
        )
        return (gx,)

    return Tensor._from_op(data, (x,), bw)


def concat(xs, axis):
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat of empty list")
    _check_axis(xs[0], axis)
    data = np.concatenate([x.data for x in xs], axis=axis)
    sizes = [x.data.shape[axis] for x in xs]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, offsets, axis=axis))

    return Tensor._from_op(data, tuple(xs), bw)


def reshape(x, shape):
    x = as_tensor(x)
    data = x.data.reshape(shape)

    def bw(g):
        return (g.reshape(x.data.shape),)

    return Tensor._from_op(data, (x,), bw)


def broadcast_to(x, shape):
    x = as_tensor(x)
    data = np.broadcast_to(x.data, shape)

    def bw(g):
        return (_unbroadcast(g, x.data.shape),)

    return Tensor._from_op(data, (x,), bw)


def getitem(x, idx):
    x = as_tensor(x)
    data = x.data[idx]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return Tensor._from_op(data, (x,), bw)


def bce_with_logits(logits, targets):
    """Mean binary cross-entropy computed from logits (log-sum-exp form).

    Targets must be exactly 0 or 1. Numerically safe for large |logit|.
    """
    logits = as_tensor(logits)
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=np.float64)
    if t.shape != logits.data.shape:
        raise ShapeError(f"target shape {t.shape} != logits shape {logits.data.shape}")
    if not np.all((t == 0.0) | (t == 1.0)):
        raise InvalidInputError("bce targets must be 0 or 1")
    z = logits.data
    data = np.asarray(np.mean(np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))))
    n = z.size

    def bw(g):
        p = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
        return ((p - t) * (g / n), None)

    tgt = targets if isinstance(targets, Tensor) else Tensor(t)
    return Tensor._from_op(data, (logits, tgt), bw)
