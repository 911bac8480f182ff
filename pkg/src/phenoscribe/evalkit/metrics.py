"""Confusion counts, precision/recall/balanced accuracy, ROC and corner-point thresholds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from ..errors import EmptyCounts, SingleClass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, predicted, labels) -> "ConfusionCounts":
        p = np.asarray(predicted).astype(bool)
        y = np.asarray(labels).astype(bool)
        return cls(int(np.sum(p & y)), int(np.sum(p & ~y)), int(np.sum(~p & ~y)), int(np.sum(~p & y)))


def metrics(c: ConfusionCounts):
    """(precision, recall, balanced accuracy).

    Precision and recall are 0 when their denominator is 0.  Inside balanced
    accuracy a rate whose class is absent counts as 0.5.
    """
    if c.total <= 0:
        raise EmptyCounts("no evaluated samples")
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    tpr = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.5
    tnr = c.tn / (c.tn + c.fp) if c.tn + c.fp else 0.5
    return precision, recall, (tpr + tnr) / 2


def evaluate(scores, labels, threshold):
    """Apply ``score >= threshold`` and return (P, R, BA)."""
    return metrics(ConfusionCounts.from_predictions(np.asarray(scores) >= threshold, labels))


@dataclass(frozen=True, eq=False)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # descending; the first is +inf (nothing predicted positive)

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))

    def auc(self) -> float:
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2))


def roc_curve(scores, labels) -> RocCurve:
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass(f"need both classes, got {n_pos} positive and {n_neg} negative")
    order = np.argsort(-scores, kind="mergesort")
    s, yy = scores[order], y[order]
    tp = np.cumsum(yy)
    fp = np.cumsum(~yy)
    # keep the last index of each run of equal scores
    last = np.flatnonzero(np.append(np.diff(s) != 0, True))
    fpr = np.concatenate(([0.0], fp[last] / n_neg))
    tpr = np.concatenate(([0.0], tp[last] / n_pos))
    thr = np.concatenate(([np.inf], s[last]))
    return RocCurve(fpr, tpr, thr)


def roc_and_threshold(scores, labels):
    """ROC curve and the threshold whose point lies closest to (0, 1).

    Ties go to the higher TPR, then to the lower threshold.
    """
    curve = roc_curve(scores, labels)
    dist = np.sqrt(curve.fpr ** 2 + (1.0 - curve.tpr) ** 2)
    best = min(range(dist.size), key=lambda i: (dist[i], -curve.tpr[i], curve.thresholds[i]))
    return curve, float(curve.thresholds[best])


def auc_rank(scores, labels) -> float:
    """Mann-Whitney estimate of the ROC area (ties count one half)."""
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    pos, neg = scores[y], scores[~y]
    if pos.size == 0 or neg.size == 0:
        raise SingleClass("need both classes")
    ranks = rankdata(np.concatenate([pos, neg]), method="average")
    return float((ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2) / (pos.size * neg.size))


def best_corner_ba(scores, labels) -> float:
    """Balanced accuracy at the corner-point threshold, on the same data (model selection)."""
    try:
        _, thr = roc_and_threshold(scores, labels)
    except SingleClass:
        return 0.5
    return evaluate(scores, labels, thr)[2]
