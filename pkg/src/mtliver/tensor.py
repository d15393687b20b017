"""Reverse-mode automatic differentiation over dense float64 arrays.

A forward computation records a tape of nodes; ``backward`` on a scalar
node zeroes the gradients of every node reachable from it and then
accumulates analytic gradients in reverse topological order.  Arrays are
rank 1..4 float64; file boundaries elsewhere quantize to float32.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ContractError, ShapeError


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 4:
            raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum of 4")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor data must be finite (NaN/Inf rejected)")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- plumbing ---------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractError("item() requires a scalar tensor")
        return float(self.data.reshape(()))

    def detach(self):
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        return out

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _make(data, parents, backward):
    """Create an op result; the tape is only extended when a parent needs grads."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def backward(loss):
    """Populate gradients of every tensor reachable from the scalar `loss`.

    Gradients of reachable nodes are reset to zero first, so repeated calls
    never accumulate across backward passes.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ContractError("backward requires a scalar tensor")
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    for node in topo:
        node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()


# -- elementwise / arithmetic ------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data + b.data, (a, b), None)
    if out.requires_grad:
        def bwd():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad, a.data.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(out.grad, b.data.shape)
        out._backward = bwd
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data * b.data, (a, b), None)
    if out.requires_grad:
        def bwd():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad * b.data, a.data.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(out.grad * a.data, b.data.shape)
        out._backward = bwd
    return out


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data / b.data, (a, b), None)
    if out.requires_grad:
        def bwd():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad / b.data, a.data.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(-out.grad * a.data / (b.data * b.data), b.data.shape)
        out._backward = bwd
    return out


def square(a):
    return mul(a, a)


def exp(a):
    a = as_tensor(a)
    e = np.exp(a.data)
    out = _make(e, (a,), None)
    if out.requires_grad:
        def bwd():
            a.grad += out.grad * e
        out._backward = bwd
    return out


def log(a):
    a = as_tensor(a)
    out = _make(np.log(a.data), (a,), None)
    if out.requires_grad:
        def bwd():
            a.grad += out.grad / a.data
        out._backward = bwd
    return out


def absolute(a):
    a = as_tensor(a)
    out = _make(np.abs(a.data), (a,), None)
    if out.requires_grad:
        sign = np.sign(a.data)  # subgradient 0 at ties
        def bwd():
            a.grad += out.grad * sign
        out._backward = bwd
    return out


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    out = _make(np.where(mask, a.data, 0.0), (a,), None)
    if out.requires_grad:
        def bwd():
            a.grad += out.grad * mask
        out._backward = bwd
    return out


def sigmoid(a):
    a = as_tensor(a)
    s = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-a.data)),
                 np.exp(a.data) / (1.0 + np.exp(a.data)))
    out = _make(s, (a,), None)
    if out.requires_grad:
        def bwd():
            a.grad += out.grad * s * (1.0 - s)
        out._backward = bwd
    return out


def clip(a, lo, hi):
    """Clamp values; gradient passes through only inside the open interval."""
    a = as_tensor(a)
    mask = (a.data > lo) & (a.data < hi)
    out = _make(np.clip(a.data, lo, hi), (a,), None)
    if out.requires_grad:
        def bwd():
            a.grad += out.grad * mask
        out._backward = bwd
    return out


# -- reductions / shape ------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), None)
    if out.requires_grad:
        def bwd():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a.grad += np.broadcast_to(g, a.data.shape)
        out._backward = bwd
    return out


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a, shape):
    a = as_tensor(a)
    out = _make(a.data.reshape(shape), (a,), None)
    if out.requires_grad:
        def bwd():
            a.grad += out.grad.reshape(a.data.shape)
        out._backward = bwd
    return out


def transpose2d(a):
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("transpose2d requires a rank-2 tensor")
    out = _make(np.ascontiguousarray(a.data.T), (a,), None)
    if out.requires_grad:
        def bwd():
            a.grad += out.grad.T
        out._backward = bwd
    return out


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), None)
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def bwd():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    sl = [slice(None)] * out.grad.ndim
                    sl[axis] = slice(lo, hi)
                    t.grad += out.grad[tuple(sl)]
        out._backward = bwd
    return out


def narrow(a, axis, start, length):
    a = as_tensor(a)
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = _make(np.ascontiguousarray(a.data[sl]), (a,), None)
    if out.requires_grad:
        def bwd():
            a.grad[sl] += out.grad
        out._backward = bwd
    return out


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul supports rank-2 operands only")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul mismatch {a.data.shape} @ {b.data.shape}")
    out = _make(a.data @ b.data, (a, b), None)
    if out.requires_grad:
        def bwd():
            if a.requires_grad:
                a.grad += out.grad @ b.data.T
            if b.requires_grad:
                b.grad += a.data.T @ out.grad
        out._backward = bwd
    return out


# -- softmax / normalization -------------------------------------------------


def softmax(a, axis=-1):
    """Numerically stable softmax along `axis` (max subtraction)."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    out = _make(s, (a,), None)
    if out.requires_grad:
        def bwd():
            g = out.grad
            a.grad += s * (g - (g * s).sum(axis=axis, keepdims=True))
        out._backward = bwd
    return out


def batchnorm2d(x, gamma, beta, running_mean, running_var, training,
                momentum=0.1, eps=1e-5, update_running=None):
    """Per-channel batch normalization of a (C,H,W) map.

    With batch size 1 the statistics are taken over the spatial positions of
    each channel.  `running_mean`/`running_var` are plain float64 arrays and
    are updated in place when `update_running` (default: `training`) is true
    (biased variance throughout).
    """
    x = as_tensor(x)
    c, h, w = x.data.shape
    m = h * w
    if update_running is None:
        update_running = training
    if training:
        mean = x.data.mean(axis=(1, 2))
        var = x.data.var(axis=(1, 2))
        if update_running:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * var
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[:, None, None]) * inv_std[:, None, None]
    y = gamma.data[:, None, None] * xhat + beta.data[:, None, None]
    out = _make(y, (x, gamma, beta), None)
    if out.requires_grad:
        def bwd():
            g = out.grad
            if gamma.requires_grad:
                gamma.grad += (g * xhat).sum(axis=(1, 2))
            if beta.requires_grad:
                beta.grad += g.sum(axis=(1, 2))
            if x.requires_grad:
                scale = gamma.data[:, None, None] * inv_std[:, None, None]
                if training:
                    gm = g.mean(axis=(1, 2))[:, None, None]
                    gxm = (g * xhat).mean(axis=(1, 2))[:, None, None]
                    x.grad += scale * (g - gm - xhat * gxm)
                else:
                    x.grad += scale * g
        out._backward = bwd
    return out


def layernorm(x, gamma, beta, eps=1e-5):
    """Layer normalization over the last axis (rank-1 or rank-2 input)."""
    x = as_tensor(x)
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    y = gamma.data * xhat + beta.data
    out = _make(y, (x, gamma, beta), None)
    if out.requires_grad:
        def bwd():
            g = out.grad
            dim = x.data.shape[-1]
            if gamma.requires_grad:
                gamma.grad += (g * xhat).reshape(-1, dim).sum(axis=0)
            if beta.requires_grad:
                beta.grad += g.reshape(-1, dim).sum(axis=0)
            if x.requires_grad:
                gg = g * gamma.data
                gm = gg.mean(axis=-1, keepdims=True)
                gxm = (gg * xhat).mean(axis=-1, keepdims=True)
                x.grad += inv_std * (gg - gm - xhat * gxm)
        out._backward = bwd
    return out


# -- convolution / pooling ----------------------------------------------------


def conv2d(x, w, b):
    """3x3 convolution, stride 1, padding 1, over a (C_in,H,W) map."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 3 or w.data.ndim != 4 or w.data.shape[2:] != (3, 3):
        raise ShapeError("conv2d expects x (C,H,W) and w (C_out,C_in,3,3)")
    if x.data.shape[0] != w.data.shape[1]:
        raise ShapeError(
            f"channel mismatch: input has {x.data.shape[0]}, kernel expects {w.data.shape[1]}")
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    out = _make(kernels.conv3x3_forward(xd, wd, np.ascontiguousarray(b.data)), (x, w, b), None)
    if out.requires_grad:
        def bwd():
            gx, gw, gb = kernels.conv3x3_backward(xd, wd, np.ascontiguousarray(out.grad))
            if x.requires_grad:
                x.grad += gx
            if w.requires_grad:
                w.grad += gw
            if b.requires_grad:
                b.grad += gb
        out._backward = bwd
    return out


def conv_transpose2d(x, w, b):
    """4x4 transposed convolution, stride 2, padding 1: (C_in,H,W) -> (C_out,2H,2W)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 3 or w.data.ndim != 4 or w.data.shape[2:] != (4, 4):
        raise ShapeError("conv_transpose2d expects x (C,H,W) and w (C_in,C_out,4,4)")
    if x.data.shape[0] != w.data.shape[0]:
        raise ShapeError(
            f"channel mismatch: input has {x.data.shape[0]}, kernel expects {w.data.shape[0]}")
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    out = _make(kernels.convt4x4_forward(xd, wd, np.ascontiguousarray(b.data)), (x, w, b), None)
    if out.requires_grad:
        def bwd():
            gx, gw, gb = kernels.convt4x4_backward(xd, wd, np.ascontiguousarray(out.grad))
            if x.requires_grad:
                x.grad += gx
            if w.requires_grad:
                w.grad += gw
            if b.requires_grad:
                b.grad += gb
        out._backward = bwd
    return out


def maxpool2d(x):
    """2x2 max pooling with stride 2; spatial extents must be even."""
    x = as_tensor(x)
    c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2d requires even extents, got {h}x{w}")
    y, idx = kernels.maxpool2x2_forward(np.ascontiguousarray(x.data))
    out = _make(y, (x,), None)
    if out.requires_grad:
        def bwd():
            x.grad += kernels.maxpool2x2_backward(idx, np.ascontiguousarray(out.grad), h, w)
        out._backward = bwd
    return out
