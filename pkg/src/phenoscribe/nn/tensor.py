"""Reverse-mode autodiff over numpy arrays.

Each op records its parents and a closure that pushes the output gradient
back into them.  ``backward`` walks the recorded graph in reverse
topological order.  Tensors that do not require grad are never written to,
so frozen weights cost nothing on the backward pass while still passing
gradient through to their inputs.
"""
from __future__ import annotations

import contextlib
import os

import numpy as np

from ..errors import NonScalarLoss

_DTYPE = np.float64 if os.environ.get("PHENOSCRIBE_FLOAT64", "0") == "1" else np.float32
_GRAD_ENABLED = True


def get_dtype():
    return _DTYPE


def set_dtype(dtype) -> None:
    global _DTYPE
    _DTYPE = np.dtype(dtype).type


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default float type (64-bit for gradient checks)."""
    prev = _DTYPE
    set_dtype(dtype)
    try:
        yield
    finally:
        set_dtype(prev)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=""):
        arr = np.asarray(data)
        if arr.dtype != _DTYPE:
            arr = arr.astype(_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    # -- bookkeeping ---------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.data.shape[0]

    def _accum(self, g):
        if not self.requires_grad:
            return
        g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def detach(self):
        return Tensor(self.data)

    def backward(self):
        if self.data.size != 1:
            raise NonScalarLoss(f"backward needs a scalar loss, got shape {self.shape}")
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # intermediate buffers are not needed after propagation
                    node.grad = None if not isinstance(node, Parameter) else node.grad

    # -- elementwise ---------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        out = _op(self.data + other.data, (self, other))
        if out.requires_grad:
            def back(g):
                self._accum(g)
                other._accum(g)
            out._backward = back
        return out

    __radd__ = __add__

    def __neg__(self):
        out = _op(-self.data, (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(-g)
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = _op(self.data * other.data, (self, other))
        if out.requires_grad:
            def back(g):
                self._accum(g * other.data)
                other._accum(g * self.data)
            out._backward = back
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = _op(self.data / other.data, (self, other))
        if out.requires_grad:
            def back(g):
                self._accum(g / other.data)
                other._accum(-g * self.data / (other.data * other.data))
            out._backward = back
        return out

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, power):
        out = _op(self.data ** power, (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g * power * self.data ** (power - 1))
        return out

    def exp(self):
        val = np.exp(self.data)
        out = _op(val, (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g * val)
        return out

    def log(self):
        out = _op(np.log(self.data), (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g / self.data)
        return out

    def tanh(self):
        val = np.tanh(self.data)
        out = _op(val, (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g * (1.0 - val * val))
        return out

    def sigmoid(self):
        val = 0.5 * (1.0 + np.tanh(0.5 * self.data))
        out = _op(val, (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g * val * (1.0 - val))
        return out

    def relu(self):
        out = _op(np.maximum(self.data, 0), (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g * (self.data > 0))
        return out

    def gelu(self):
        c = float(np.sqrt(2.0 / np.pi))
        x = self.data
        inner = c * (x + 0.044715 * (x * x * x))
        t = np.tanh(inner)
        out = _op(0.5 * x * (1.0 + t), (self,))
        if out.requires_grad:
            def back(g):
                dinner = c * (1.0 + 3 * 0.044715 * x * x)
                self._accum(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner))
            out._backward = back
        return out

    def clamp(self, lo, hi):
        out = _op(np.clip(self.data, lo, hi), (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g * ((self.data >= lo) & (self.data <= hi)))
        return out

    # -- reductions & shape --------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        out = _op(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            def back(g):
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accum(np.broadcast_to(g, self.data.shape))
            out._backward = back
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _op(self.data.reshape(shape), (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g.reshape(self.data.shape))
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        axes = axes or tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        out = _op(self.data.transpose(axes), (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g.transpose(inv))
        return out

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(axes)

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        if isinstance(idx, Tensor):
            idx = idx.data.astype(np.int64)
        out = _op(self.data[idx], (self,))
        if out.requires_grad:
            def back(g):
                full = np.zeros_like(self.data)
                np.add.at(full, idx, g)
                self._accum(full)
            out._backward = back
        return out

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def softmax(self, axis=-1):
        z = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        val = e / e.sum(axis=axis, keepdims=True)
        out = _op(val, (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(val * (g - (g * val).sum(axis=axis, keepdims=True)))
        return out

    def log_softmax(self, axis=-1):
        z = self.data - self.data.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
        val = z - lse
        out = _op(val, (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g - np.exp(val) * g.sum(axis=axis, keepdims=True))
        return out


class Parameter(Tensor):
    """A named leaf tensor; frozen parameters neither receive grads nor updates."""

    __slots__ = ("frozen",)

    def __init__(self, data, name="", frozen=False):
        super().__init__(data, requires_grad=not frozen, name=name)
        self.frozen = frozen
        self.grad = np.zeros_like(self.data)

    def freeze(self):
        self.frozen = True
        self.requires_grad = False
        self.grad = np.zeros_like(self.data)
        return self

    def unfreeze(self):
        self.frozen = False
        self.requires_grad = True
        return self

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def assign(self, values):
        values = np.asarray(values, dtype=self.data.dtype)
        if values.shape != self.data.shape:
            raise ValueError(f"shape mismatch for {self.name}: {values.shape} vs {self.data.shape}")
        self.data = values.copy()
        self.grad = np.zeros_like(self.data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _op(data, parents) -> Tensor:
    req = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req)
    if req:
        out._parents = parents
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _op(a.data @ b.data, (a, b))
    if out.requires_grad:
        def back(g):
            ad, bd = a.data, b.data
            a2 = ad[None, :] if ad.ndim == 1 else ad
            b2 = bd[:, None] if bd.ndim == 1 else bd
            g2 = g
            if ad.ndim == 1:
                g2 = np.expand_dims(g2, -2)
            if bd.ndim == 1:
                g2 = np.expand_dims(g2, -1)
            if a.requires_grad:
                ga = g2 @ np.swapaxes(b2, -1, -2)
                if ad.ndim == 1:
                    ga = ga.reshape(ga.shape[:-2] + ga.shape[-1:]) if ga.ndim > 2 else ga[0]
                a._accum(ga)
            if b.requires_grad:
                gb = np.swapaxes(a2, -1, -2) @ g2
                if bd.ndim == 1:
                    gb = gb[..., 0]
                b._accum(gb)
        out._backward = back
    return out


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = _op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out.requires_grad:
        bounds = np.cumsum([0] + [t.data.shape[axis] for t in tensors])

        def back(g):
            for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])
        out._backward = back
    return out


def stack(tensors, axis=0) -> Tensor:
    return concat([as_tensor(t).reshape(_expand_shape(as_tensor(t).shape, axis)) for t in tensors], axis=axis)


def _expand_shape(shape, axis):
    shape = list(shape)
    axis = axis if axis >= 0 else len(shape) + 1 + axis
    shape.insert(axis, 1)
    return tuple(shape)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = _op(xhat * gamma.data + beta.data, (x, gamma, beta))
    if out.requires_grad:
        n = xd.shape[-1]

        def back(g):
            gamma._accum((g * xhat).reshape(-1, n).sum(axis=0))
            beta._accum(g.reshape(-1, n).sum(axis=0))
            if x.requires_grad:
                dxhat = g * gamma.data
                x._accum(
                    inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True) - xhat * (dxhat * xhat).sum(-1, keepdims=True))
                )
        out._backward = back
    return out
