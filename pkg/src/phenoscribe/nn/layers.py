"""Layers used by the language model, the biomarker encoder and the longitudinal GRU."""
from __future__ import annotations

import numpy as np

from ..errors import DimMismatch, EmptySequence
from .tensor import Parameter, Tensor, as_tensor, get_dtype, layer_norm


class Module:
    """Parameter container; discovers Parameters and sub-Modules by attribute walk."""

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            yield from _walk(value, f"{prefix}{key}")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix=""):
        yield prefix.rstrip("."), self
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        yield from v.named_modules(f"{prefix}{key}.{i}.")
            elif isinstance(value, dict):
                for k in sorted(value):
                    if isinstance(value[k], Module):
                        yield from value[k].named_modules(f"{prefix}{key}.{k}.")

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def freeze(self):
        for p in self.parameters():
            p.freeze()
        return self

    def unfreeze(self):
        for p in self.parameters():
            p.unfreeze()
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(value, name):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}")
    elif isinstance(value, dict):
        for k in sorted(value):
            yield from _walk(value[k], f"{name}.{k}")


def uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """Row-vector convention: ``y = x @ W + b`` with W of shape (d_in, d_out)."""

    def __init__(self, d_in, d_out, rng, bias=True):
        self.d_in, self.d_out = d_in, d_out
        self.W = Parameter(uniform_init(rng, d_in, (d_in, d_out)), "W")
        self.b = Parameter(np.zeros(d_out), "b") if bias else None

    def forward(self, x):
        x = as_tensor(x)
        if x.shape[-1] != self.d_in:
            raise DimMismatch(f"Linear expects last dim {self.d_in}, got {x.shape[-1]}")
        y = x @ self.W
        return y + self.b if self.b is not None else y


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        self.eps = eps
        self.gamma = Parameter(np.ones(d), "gamma")
        self.beta = Parameter(np.zeros(d), "beta")

    def forward(self, x):
        return layer_norm(as_tensor(x), self.gamma, self.beta, self.eps)


def sinusoidal_positions(n, d, offset=0):
    pos = np.arange(offset, offset + n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle)).astype(get_dtype())


def causal_mask(t):
    """Additive (t, t) mask: 0 on and below the diagonal, -1e9 above."""
    return np.triu(np.full((t, t), -1e9, dtype=get_dtype()), k=1)


class MultiHeadAttention(Module):
    """Scaled dot-product self-attention with optional low-rank adapters on projections.

    ``adapters`` maps a projection name ("q", "k", "v", "o") to an object
    with ``delta(x)``; its output is added to that projection.
    """

    def __init__(self, d, n_heads, rng):
        if d % n_heads:
            raise DimMismatch("d_model must be divisible by n_heads")
        self.d, self.n_heads = d, n_heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)
        self.adapters = {}
        self._last_weights = None

    def project(self, name, x):
        y = getattr(self, name)(x)
        if name in self.adapters:
            y = y + self.adapters[name].delta(x)
        return y

    def forward(self, x, mask=None):
        """x: (B, T, d); mask: additive array broadcastable to (B, H, T, T)."""
        b, t, d = x.shape
        h, dh = self.n_heads, d // self.n_heads

        def heads(z):
            return z.reshape(b, t, h, dh).transpose(0, 2, 1, 3)

        q = heads(self.project("q", x))
        k = heads(self.project("k", x))
        v = heads(self.project("v", x))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
        if mask is not None:
            scores = scores + np.asarray(mask, dtype=scores.data.dtype)
        weights = scores.softmax(axis=-1)
        self._last_weights = weights.data
        ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
        return self.project("o", ctx)

    @property
    def last_weights(self):
        return self._last_weights


class FeedForward(Module):
    def __init__(self, d, d_ff, rng):
        self.fc1 = Linear(d, d_ff, rng)
        self.fc2 = Linear(d_ff, d, rng)

    def forward(self, x):
        return self.fc2(self.fc1(x).gelu())


class EncoderBlock(Module):
    """Pre-norm block: x + attn(ln(x)), then x + ffn(ln(x))."""

    def __init__(self, d, n_heads, d_ff, rng):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, n_heads, rng)
        self.ln2 = LayerNorm(d)
        self.ffn = FeedForward(d, d_ff, rng)

    def forward(self, x, mask=None):
        x = x + self.attn(self.ln1(x), mask)
        return x + self.ffn(self.ln2(x))


class TransformerEncoder(Module):
    def __init__(self, d, n_layers, n_heads, d_ff, rng):
        self.blocks = [EncoderBlock(d, n_heads, d_ff, rng) for _ in range(n_layers)]

    def forward(self, x, mask=None):
        x = as_tensor(x)
        if x.shape[-2] == 0:
            raise EmptySequence("transformer input has no positions")
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        for block in self.blocks:
            x = block(x, mask)
        return x.reshape(x.shape[1:]) if squeeze else x


class GRUCell(Module):
    def __init__(self, d_in, d_hidden, rng):
        self.d_in, self.hidden_dim = d_in, d_hidden
        for gate in ("z", "r", "h"):
            setattr(self, f"W_{gate}", Parameter(uniform_init(rng, d_in, (d_in, d_hidden)), f"W_{gate}"))
            setattr(self, f"U_{gate}", Parameter(uniform_init(rng, d_hidden, (d_hidden, d_hidden)), f"U_{gate}"))
            setattr(self, f"b_{gate}", Parameter(np.zeros(d_hidden), f"b_{gate}"))

    def forward(self, h_prev, x):
        return gru_step(self, h_prev, x)


def gru_step(cell: GRUCell, h_prev, x) -> Tensor:
    h_prev, x = as_tensor(h_prev), as_tensor(x)
    if x.shape[-1] != cell.d_in or h_prev.shape[-1] != cell.hidden_dim:
        raise DimMismatch(
            f"GRU expects x[..., {cell.d_in}] and h[..., {cell.hidden_dim}], got {x.shape} and {h_prev.shape}"
        )
    z = (x @ cell.W_z + h_prev @ cell.U_z + cell.b_z).sigmoid()
    r = (x @ cell.W_r + h_prev @ cell.U_r + cell.b_r).sigmoid()
    cand = (x @ cell.W_h + (r * h_prev) @ cell.U_h + cell.b_h).tanh()
    return (1.0 - z) * h_prev + z * cand
