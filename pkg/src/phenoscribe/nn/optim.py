"""Adam with a hard freeze contract: frozen parameters are skipped entirely."""
from __future__ import annotations

import numpy as np


def adam_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8):
    """One functional Adam update.

    ``params`` are Parameters (updated in place), ``grads`` the matching
    arrays, ``state`` a dict holding ``t`` and per-index moments.
    """
    b1, b2 = betas
    state["t"] = state.get("t", 0) + 1
    t = state["t"]
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.frozen or g is None:
            continue
        m = state.setdefault(("m", i), np.zeros_like(p.data))
        v = state.setdefault(("v", i), np.zeros_like(p.data))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)
    return state


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = [p for p in params if not p.frozen]
        self.lr, self.betas, self.eps = lr, betas, eps
        self.state = {}

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr, self.betas, self.eps)
