"""Weighted binary cross-entropy per task and the main + auxiliary combination."""
from __future__ import annotations

import logging

import numpy as np

from .nn.tensor import Tensor, as_tensor

log = logging.getLogger(__name__)

P_MIN, P_MAX = 1e-7, 1.0 - 1e-7
MAIN, AUX = 0, (1, 2)


def task_loss(y, yhat, w_plus):
    """``-(w+ * y * log p + (1 - y) * log(1 - p))`` with p clamped to [1e-7, 1 - 1e-7].

    Works elementwise on arrays/Tensors; returns a Tensor.
    """
    p = as_tensor(yhat).clamp(P_MIN, P_MAX)
    y = np.asarray(y, dtype=p.data.dtype)
    return -(p.log() * (np.asarray(w_plus, dtype=p.data.dtype) * y) + (1.0 - p).log() * (1.0 - y))


def total_loss(l_main, l_aux0, l_aux1, lambda_aux):
    return l_main + (l_aux0 + l_aux1) * float(lambda_aux)


def mtl_objective(labels, probs: Tensor, w_plus, lambda_aux) -> Tensor:
    """Batch-mean task losses on an (N, 3) probability Tensor, combined main + aux."""
    labels = np.asarray(labels)
    per_task = [task_loss(labels[:, t], probs[:, t], w_plus[t]).mean() for t in range(3)]
    return total_loss(per_task[MAIN], per_task[AUX[0]], per_task[AUX[1]], lambda_aux)


def positive_weights(labels) -> list:
    """``N_neg / N_pos`` per task from training labels; 1.0 when a task has one class."""
    labels = np.asarray(labels)
    out = []
    for t in range(labels.shape[1]):
        pos = int(labels[:, t].sum())
        neg = labels.shape[0] - pos
        if pos == 0 or neg == 0:
            log.warning("task %d has a single class in training; w+ defaults to 1", t)
            out.append(1.0)
        else:
            out.append(neg / pos)
    return out
