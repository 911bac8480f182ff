"""Central finite-difference oracle for the autodiff engine."""
from __future__ import annotations

import numpy as np


def numeric_grad(loss_fn, param, eps=1e-4):
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = loss_fn().item()
        flat[i] = old - eps
        down = loss_fn().item()
        flat[i] = old
        grad.reshape(-1)[i] = (up - down) / (2 * eps)
    return grad


def max_relative_error(loss_fn, params, eps=1e-4, floor=1e-6):
    """Largest normwise relative error between autodiff and finite differences.

    For each parameter the error is ``max|a - n| / max(max|a|, max|n|, floor)``.
    The floor keeps analytically-zero gradients (e.g. a key bias under
    softmax shift invariance) from dividing finite-difference noise by ~0.
    """
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        n = numeric_grad(loss_fn, p, eps)
        scale = max(np.abs(a).max(), np.abs(n).max(), floor)
        worst = max(worst, float(np.abs(a - n).max() / scale))
    return worst
