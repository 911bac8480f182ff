import csv
import io
import json

import numpy as np
import pytest

from phenoscribe.cohort import generate_cohort, split
from phenoscribe.config import RunConfig
from phenoscribe.errors import EmptyCounts, SingleClass
from phenoscribe.evalkit import (
    ConfusionCounts,
    ablate_lambda,
    auc_rank,
    evaluate,
    metrics,
    roc_and_threshold,
    roc_curve,
    run_experiment,
    write_ablation,
    write_results,
)
from phenoscribe.evalkit.experiment import select_threshold
from phenoscribe.pipeline import split_labels


# -- metrics --------------------------------------------------------------

def test_metrics_examples():
    assert metrics(ConfusionCounts(tp=3, fp=2, tn=2, fn=1)) == pytest.approx((0.6, 0.75, 0.625))
    assert metrics(ConfusionCounts(tp=4, fp=0, tn=6, fn=0)) == (1.0, 1.0, 1.0)


def test_no_positive_predictions_is_degenerate_row():
    labels = np.array([0] * 9 + [1] * 3)
    p, r, ba = evaluate(np.zeros(12), labels, 0.5)
    assert (f"{p:.3f}", f"{r:.3f}", f"{ba:.3f}") == ("0.000", "0.000", "0.500")


def test_absent_class_rate_contributes_half():
    assert metrics(ConfusionCounts(tp=3, fp=0, tn=0, fn=1))[2] == pytest.approx(0.625)
    assert metrics(ConfusionCounts(tp=0, fp=1, tn=3, fn=0)) == (0.0, 0.0, pytest.approx(0.625))


def test_empty_counts():
    with pytest.raises(EmptyCounts):
        metrics(ConfusionCounts(0, 0, 0, 0))


def test_metrics_match_recount():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        y = rng.integers(0, 2, n)
        s = rng.random(n)
        thr = rng.random()
        tp = fp = tn = fn = 0
        for si, yi in zip(s, y):
            if si >= thr:
                tp, fp = tp + (yi == 1), fp + (yi == 0)
            else:
                fn, tn = fn + (yi == 1), tn + (yi == 0)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        tpr = tp / (tp + fn) if tp + fn else 0.5
        tnr = tn / (tn + fp) if tn + fp else 0.5
        assert evaluate(s, y, thr) == pytest.approx((p, r, (tpr + tnr) / 2), abs=1e-12)


# -- ROC ------------------------------------------------------------------

def test_perfect_separation():
    scores = np.array([0.1, 0.2, 0.25, 0.6, 0.7, 0.9])
    labels = np.array([0, 0, 0, 1, 1, 1])
    curve, thr = roc_and_threshold(scores, labels)
    assert 0.25 < thr <= 0.6
    assert evaluate(scores, labels, thr) == (1.0, 1.0, 1.0)
    assert curve.auc() == 1.0


def test_roc_staircase_and_endpoints():
    rng = np.random.default_rng(1)
    scores = np.round(rng.random(200), 1)  # many ties
    labels = rng.integers(0, 2, 200)
    curve = roc_curve(scores, labels)
    assert (curve.fpr[0], curve.tpr[0]) == (0.0, 0.0)
    assert (curve.fpr[-1], curve.tpr[-1]) == (1.0, 1.0)
    assert np.all(np.diff(curve.fpr) >= 0) and np.all(np.diff(curve.tpr) >= 0)
    assert np.all(np.diff(curve.thresholds) < 0)


def test_random_scores_auc_near_half():
    rng = np.random.default_rng(2)
    scores, labels = rng.random(10000), rng.integers(0, 2, 10000)
    assert abs(roc_curve(scores, labels).auc() - 0.5) < 0.02


def test_trapezoid_and_rank_auc_agree():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(2, 300))
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        scores = np.round(rng.random(n) + 0.3 * labels, int(rng.integers(1, 4)))
        assert abs(roc_curve(scores, labels).auc() - auc_rank(scores, labels)) < 1e-9


def test_single_class():
    with pytest.raises(SingleClass):
        roc_and_threshold([0.1, 0.5], [1, 1])
    with pytest.raises(SingleClass):
        auc_rank([0.1, 0.5], [0, 0])


def test_tie_break_prefers_higher_tpr_then_lower_threshold():
    # thresholds 0.9 -> (0, 0.5) and 0.4 -> (0.5, 1) are both 0.5 from the corner
    curve, thr = roc_and_threshold([0.9, 0.5, 0.4, 0.1], [1, 0, 1, 0])
    pts = {t: (f, r) for f, r, t in curve.points}
    assert pts[0.9] == (0.0, 0.5) and pts[0.4] == (0.5, 1.0)
    assert thr == 0.4


def test_single_class_validation_falls_back():
    thr, rule = select_threshold(np.array([0.2, 0.7]), np.array([0, 0]))
    assert (thr, rule) == (0.5, "single_class_fallback")


# -- experiment drivers ---------------------------------------------------

class StubCache:
    """Stands in for the model cache: scores are noisy labels, keyed deterministically."""

    def __init__(self, cohort):
        self.cohort = cohort
        self.calls = []

    def scores(self, seed, arch, split_name, lambda_aux=None):
        self.calls.append((seed, arch, split_name, lambda_aux))
        y = split_labels(self.cohort, split_name).astype(float)
        rng = np.random.default_rng([seed, len(arch), int(100 * (lambda_aux or 0))])
        return y * 0.5 + rng.random(y.shape)


@pytest.fixture(scope="module")
def cohort():
    return split(generate_cohort(0, 10, 3), seed=0)


def test_one_architecture_one_seed_gives_three_rows(cohort):
    res = run_experiment(RunConfig(), StubCache(cohort), ["trimodal"], [0])
    assert [r["task"] for r in res.rows] == ["depression", "si", "sleep"]
    assert all(r["architecture"] == "trimodal" and r["seed"] == 0 for r in res.rows)


def test_threshold_audit_reproducible_from_validation(cohort):
    cache = StubCache(cohort)
    res = run_experiment(RunConfig(), cache, ["text", "trimodal"], [0, 1])
    assert len(res.rows) == 2 * 2 * 3
    for row, entry in zip(res.rows, res.audit):
        assert entry["threshold_split"] == "val"
        assert select_threshold(np.array(entry["val_scores"]), np.array(entry["val_labels"]))[0] == row["threshold"]


def test_ablation_grid(cohort):
    grid = [0.0, 0.25, 0.5, 0.75, 1.0]
    summary, res = ablate_lambda(RunConfig(), StubCache(cohort), grid, [0, 1, 2])
    assert [s["lambda"] for s in summary] == grid
    assert all(s["n_seeds"] == 3 for s in summary)
    assert len(res.rows) == 15 and {r["task"] for r in res.rows} == {"depression"}


def test_results_files_are_stable(cohort, tmp_path):
    cfg = RunConfig()
    res = run_experiment(cfg, StubCache(cohort), ["text"], [0, 1])
    csv_path, json_path = write_results(res, cfg, tmp_path / "a")
    again = write_results(run_experiment(cfg, StubCache(cohort), ["text"], [0, 1]), cfg, tmp_path / "b")
    assert csv_path.read_bytes() == again[0].read_bytes()
    assert json_path.read_bytes() == again[1].read_bytes()
    rows = list(csv.DictReader(io.StringIO(csv_path.read_text())))
    assert list(rows[0]) == ["architecture", "task", "seed", "lambda", "P", "R", "BA", "threshold"]
    assert len(rows) == 6
    payload = json.loads(json_path.read_text())
    assert payload["config"] == cfg.echo() and len(payload["medians"]) == 3


def test_ablation_files(cohort, tmp_path):
    cfg = RunConfig()
    summary, res = ablate_lambda(cfg, StubCache(cohort), [0.0, 1.0], [0])
    csv_path, json_path = write_ablation(summary, res, cfg, tmp_path)
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "lambda,P,R,BA,n_seeds" and len(lines) == 3
    assert json.loads(json_path.read_text())["summary"][1]["lambda"] == 1.0
