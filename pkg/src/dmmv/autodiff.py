"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and, when gradients are required, remembers its
parent tensors plus a vector-Jacobian closure. backward() walks the recorded
graph in reverse topological order and accumulates gradients; leaves created
from Parameter objects additionally push their gradient into the parameter's
grad slot. Everything runs in double precision by default (pass float32
arrays for single precision).
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf, expit

from .errors import NotScalarLoss, ShapeMismatch

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _as_float_array(data):
    arr = np.asarray(data)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_param")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None, _param=None):
        self.data = _as_float_array(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._vjp = _vjp
        self._param = _param

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all arithmetic goes through the module-level ops
    def __add__(self, other):
        return add(self, _ensure_tensor(other))

    def __radd__(self, other):
        return add(_ensure_tensor(other), self)

    def __sub__(self, other):
        return add(self, scale(_ensure_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_ensure_tensor(other), scale(self, -1.0))

    def __mul__(self, other):
        return mul(self, _ensure_tensor(other))

    def __rmul__(self, other):
        return mul(_ensure_tensor(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _ensure_tensor(other))


def _ensure_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data):
    return Tensor(data, requires_grad=False)


def _make(data, parents, vjp):
    """Create an op result; the graph is only recorded when a parent needs it."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _vjp=vjp)
    return Tensor(data, requires_grad=False)


def _unbroadcast(grad, shape):
    """Sum a gradient down to the shape the operand had before broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# forward op set
# ---------------------------------------------------------------------------

def add(a, b):
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeMismatch("add", a.shape, b.shape) from None

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), vjp)


def mul(a, b):
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeMismatch("mul", a.shape, b.shape) from None

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), vjp)


def scale(a, s):
    s = float(s)

    def vjp(g):
        return (g * s,)

    return _make(a.data * s, (a,), vjp)


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), vjp)


def transpose(a, axes=None):
    perm = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(perm))

    def vjp(g):
        return (np.transpose(g, inv),)

    return _make(np.transpose(a.data, perm), (a,), vjp)


def reshape(a, shape):
    old = a.shape

    def vjp(g):
        return (g.reshape(old),)

    return _make(a.data.reshape(shape), (a,), vjp)


def slice_(a, key):
    out = a.data[key]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[key] += g
        return (full,)

    return _make(out, (a,), vjp)


def index_select(a, axis, indices):
    indices = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, indices, axis=axis)

    def vjp(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return _make(out, (a,), vjp)


def concat(tensors, axis=0):
    tensors = tuple(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make(out, tensors, vjp)


def broadcast_to(a, shape):
    out = np.broadcast_to(a.data, shape)

    def vjp(g):
        return (_unbroadcast(g, a.shape),)

    return _make(np.ascontiguousarray(out), (a,), vjp)


def mean(a, axis=None, keepdims=False):
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def vjp(g):
        g = np.asarray(g)
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape) / count,)

    return _make(out, (a,), vjp)


def sum_(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), vjp)


def softmax(a):
    """Softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _make(s, (a,), vjp)


def gelu(a):
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf

    def vjp(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (cdf + x * pdf),)

    return _make(out, (a,), vjp)


def sigmoid(a):
    s = expit(a.data)

    def vjp(g):
        return (g * s * (1.0 - s),)

    return _make(s, (a,), vjp)


def layer_norm(x, scale_p, shift_p, eps=1e-6):
    """Normalize the last axis with population variance, then affine-transform.

    scale/shift are 1-D tensors matching the last axis.
    """
    d = x.shape[-1]
    if scale_p.shape != (d,) or shift_p.shape != (d,):
        raise ShapeMismatch("layer_norm", x.shape, scale_p.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * scale_p.data + shift_p.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        g_shift = g.sum(axis=lead)
        g_scale = (g * xhat).sum(axis=lead)
        gx_hat = g * scale_p.data
        m1 = gx_hat.mean(axis=-1, keepdims=True)
        m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (gx_hat - m1 - xhat * m2)
        return gx, g_scale, g_shift

    return _make(out, (x, scale_p, shift_p), vjp)


def mse(pred, target):
    """Mean of squared differences over every element; returns a scalar tensor."""
    if pred.shape != target.shape:
        raise ShapeMismatch("mse", pred.shape, target.shape)
    diff = pred.data - target.data
    out = np.mean(diff * diff)
    n = diff.size

    def vjp(g):
        base = (2.0 / n) * g * diff
        return base, -base

    return _make(out, (pred, target), vjp)


def detach(a):
    """Cut the tape: same values, no gradient history."""
    return Tensor(a.data, requires_grad=False)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def backward(loss):
    """Populate .grad over the graph below `loss` and push leaf gradients into
    their Parameter grad slots. `loss` must hold a single element."""
    if loss.data.size != 1:
        raise NotScalarLoss(f"backward expects a scalar loss, got shape {loss.shape}")
    topo = _topo_order(loss)
    for node in topo:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if not parent.requires_grad or g is None:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g
    for node in topo:
        if node._param is not None and node.requires_grad and node.grad is not None:
            node._param.grad += node.grad


def _topo_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    return order
