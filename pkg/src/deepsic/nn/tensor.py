"""Minimal reverse-mode autodiff over numpy arrays.

Supports exactly the operations the codec's three networks and the training
losses need: elementwise arithmetic with broadcasting, reductions, matmul,
and a handful of shape ops. Convolution/normalization primitives live in
:mod:`deepsic.nn.functional`.

Tensors hold rank <= 4 float arrays (float32 by default, float64 allowed for
gradient checking). The graph is a plain tape: every op closes over its
inputs and contributes a ``_backward`` callback.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.float32, np.float64)


class UsageError(RuntimeError):
    """API misuse, e.g. backward without a recorded forward pass."""


class ShapeError(ValueError):
    """Incompatible tensor shapes; the message names both shapes."""


def _coerce(data, dtype=None):
    if dtype is None:
        # np.generic keeps reduction results (0-d scalars) at their precision
        if isinstance(data, (np.ndarray, np.generic)) and data.dtype in _FLOAT_DTYPES:
            dtype = data.dtype
        else:
            dtype = DEFAULT_DTYPE
    return np.asarray(data, dtype=dtype)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = _coerce(data, dtype)
        if arr.ndim > 4:
            raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum of 4: shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- introspection ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._scalar_error()

    def _scalar_error(self):
        raise UsageError(f"expected a scalar tensor, got shape {self.data.shape}")

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # -- graph ------------------------------------------------------------

    def backward(self):
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.size != 1:
            self._scalar_error()
        if self._backward is None and not self._parents:
            raise UsageError("backward called on a tensor with no recorded forward computation")
        if not np.isfinite(self.data).all():
            raise UsageError("backward called on a non-finite loss")
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in topo:
            if node is not self:
                node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # Free the tape as we go; graphs are single-use.
                node._backward = None
                node._parents = ()


def _make(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t, g):
    # Accumulation never mutates in place, so aliased contributions are safe.
    if not t.requires_grad:
        return
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


# -- elementwise arithmetic ------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(dout):
        _accum(a, _unbroadcast(dout, a.data.shape))
        _accum(b, _unbroadcast(dout, b.data.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(dout):
        _accum(a, _unbroadcast(dout, a.data.shape))
        _accum(b, _unbroadcast(-dout, b.data.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(dout):
        _accum(a, _unbroadcast(dout * bd, ad.shape))
        _accum(b, _unbroadcast(dout * ad, bd.shape))

    return _make(ad * bd, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(dout):
        _accum(a, _unbroadcast(dout / bd, ad.shape))
        _accum(b, _unbroadcast(-dout * ad / (bd * bd), bd.shape))

    return _make(ad / bd, (a, b), backward)


def neg(a):
    a = as_tensor(a)

    def backward(dout):
        _accum(a, -dout)

    return _make(-a.data, (a,), backward)


def square(a):
    a = as_tensor(a)
    ad = a.data

    def backward(dout):
        _accum(a, dout * (2.0 * ad))

    return _make(ad * ad, (a,), backward)


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward(dout):
        _accum(a, dout * out_data)

    return _make(out_data, (a,), backward)


def log(a):
    a = as_tensor(a)
    ad = a.data

    def backward(dout):
        _accum(a, dout / ad)

    return _make(np.log(ad), (a,), backward)


def softplus(a):
    a = as_tensor(a)
    ad = a.data
    # log1p(exp(-|x|)) + max(x, 0) is stable for both signs
    out_data = np.log1p(np.exp(-np.abs(ad))) + np.maximum(ad, 0)

    def backward(dout):
        sig = 1.0 / (1.0 + np.exp(-ad))
        _accum(a, dout * sig)

    return _make(out_data, (a,), backward)


def clamp(a, lo=None, hi=None):
    a = as_tensor(a)
    ad = a.data
    out_data = np.clip(ad, lo, hi)
    inside = np.ones_like(ad, dtype=bool)
    if lo is not None:
        inside &= ad >= lo
    if hi is not None:
        inside &= ad <= hi

    def backward(dout):
        _accum(a, dout * inside)

    return _make(out_data, (a,), backward)


def leaky_relu(a, slope=0.2):
    a = as_tensor(a)
    ad = a.data
    factor = np.where(ad > 0, ad.dtype.type(1), ad.dtype.type(slope))

    def backward(dout):
        _accum(a, dout * factor)

    return _make(ad * factor, (a,), backward)


def straight_through(a, fn):
    """Apply ``fn`` to the values in the forward pass, identity in backward."""
    a = as_tensor(a)
    out_data = np.asarray(fn(a.data), dtype=a.data.dtype)
    if out_data.shape != a.data.shape:
        raise ShapeError(f"straight-through fn changed shape {a.data.shape} -> {out_data.shape}")

    def backward(dout):
        _accum(a, dout)

    return _make(out_data, (a,), backward)


# -- reductions and shape ops ----------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    in_shape = a.data.shape

    def backward(dout):
        g = dout
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, in_shape).astype(a.data.dtype))

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    in_shape = a.data.shape
    count = a.data.size if axis is None else np.prod([in_shape[ax] for ax in np.atleast_1d(axis)])

    def backward(dout):
        g = dout / count
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, in_shape).astype(a.data.dtype))

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward)


def reshape(a, shape):
    a = as_tensor(a)
    in_shape = a.data.shape

    def backward(dout):
        _accum(a, dout.reshape(in_shape))

    return _make(a.data.reshape(shape), (a,), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {ad.shape} @ {bd.shape}")

    def backward(dout):
        _accum(a, dout @ bd.T)
        _accum(b, ad.T @ dout)

    return _make(ad @ bd, (a, b), backward)


def cumsum_last(a):
    a = as_tensor(a)

    def backward(dout):
        rev = np.flip(np.cumsum(np.flip(dout, axis=-1), axis=-1), axis=-1)
        _accum(a, rev)

    return _make(np.cumsum(a.data, axis=-1), (a,), backward)


def prepend_zero_last(a):
    """Prepend a zero column along the last axis."""
    a = as_tensor(a)
    zeros = np.zeros(a.data.shape[:-1] + (1,), dtype=a.data.dtype)

    def backward(dout):
        _accum(a, dout[..., 1:])

    return _make(np.concatenate([zeros, a.data], axis=-1), (a,), backward)


def gather_channel_bins(table, idx):
    """Look up ``table[c, idx[..., c, h, w]]`` for a per-channel bin table.

    ``table`` is (C, K); ``idx`` is an integer array shaped (N, C, H, W) or
    (C, H, W). Gradient scatters back into the table.
    """
    table = as_tensor(table)
    idx = np.asarray(idx)
    if idx.ndim == 3:
        idx = idx[None]
    n_ch = table.data.shape[0]
    if idx.shape[1] != n_ch:
        raise ShapeError(f"bin index channels {idx.shape[1]} != table channels {n_ch}")
    ch = np.arange(n_ch)[None, :, None, None]
    out_data = table.data[ch, idx]

    def backward(dout):
        dt = np.zeros_like(table.data)
        np.add.at(dt, (np.broadcast_to(ch, idx.shape), idx), dout)
        _accum(table, dt)

    return _make(out_data, (table,), backward)


def softmax(logits, axis=-1):
    logits = as_tensor(logits)
    z = logits.data - logits.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(dout):
        inner = (dout * p).sum(axis=axis, keepdims=True)
        _accum(logits, p * (dout - inner))

    return _make(p, (logits,), backward)


def cross_entropy_logits(logits, labels):
    """Mean negative log-likelihood of ``labels`` under softmax(logits).

    Fused log-softmax form; ``logits`` is (N, K), ``labels`` an int array (N,).
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
    n = z.shape[0]
    nll = (lse[:, 0] - z[np.arange(n), labels]).mean()
    p = np.exp(z - lse)

    def backward(dout):
        g = p.copy()
        g[np.arange(n), labels] -= 1.0
        _accum(logits, dout * g / n)

    return _make(nll, (logits,), backward)


# -- operator sugar ----------------------------------------------------------

Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__truediv__ = lambda self, other: div(self, other)
Tensor.__rtruediv__ = lambda self, other: div(other, self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.sum = tsum
Tensor.mean = tmean
Tensor.reshape = reshape


def backward(loss, parameters):
    """Backpropagate ``loss`` and return one gradient per parameter.

    Parameters without influence on the loss get zero gradients.
    """
    loss = as_tensor(loss)
    loss.backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in parameters]
