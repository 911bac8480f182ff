"""Experiment drivers: the architecture comparison table and the auxiliary-weight ablation."""
from __future__ import annotations

import csv
import io
import json
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import TASKS, RunConfig
from ..errors import SingleClass
from .metrics import evaluate, roc_and_threshold

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("architecture", "task", "seed", "lambda", "P", "R", "BA", "threshold")
ABLATION_COLUMNS = ("lambda", "P", "R", "BA", "n_seeds")
FALLBACK_THRESHOLD = 0.5


@dataclass
class Results:
    rows: list = field(default_factory=list)  # dicts keyed by RESULT_COLUMNS
    audit: list = field(default_factory=list)

    def medians(self) -> list:
        """Median P/R/BA across seeds per (architecture, task, lambda)."""
        groups: dict = {}
        for r in self.rows:
            groups.setdefault((r["architecture"], r["task"], r["lambda"]), []).append(r)
        out = []
        for (arch, task, lam), rs in groups.items():
            out.append({
                "architecture": arch, "task": task, "lambda": lam, "n_seeds": len(rs),
                **{k: statistics.median(r[k] for r in rs) for k in ("P", "R", "BA")},
            })
        return out

    def median_ba(self, architecture, task="depression") -> float:
        for m in self.medians():
            if m["architecture"] == architecture and m["task"] == task:
                return m["BA"]
        raise KeyError((architecture, task))


def select_threshold(val_scores, val_labels):
    """Corner-point threshold on validation data; falls back to 0.5 when validation has one class."""
    try:
        _, thr = roc_and_threshold(val_scores, val_labels)
        return thr, "roc_corner"
    except SingleClass:
        log.warning("validation split has a single class; using threshold %.1f", FALLBACK_THRESHOLD)
        return FALLBACK_THRESHOLD, "single_class_fallback"


def score_cell(arch, seed, lam, val_scores, val_labels, test_scores, test_labels):
    """Rows and audit entries for one (architecture, seed, lambda) cell, one per task."""
    rows, audit = [], []
    for t, task in enumerate(TASKS):
        thr, rule = select_threshold(val_scores[:, t], val_labels[:, t])
        p, r, ba = evaluate(test_scores[:, t], test_labels[:, t], thr)
        rows.append({"architecture": arch, "task": task, "seed": seed, "lambda": lam,
                     "P": p, "R": r, "BA": ba, "threshold": thr})
        audit.append({
            "architecture": arch, "task": task, "seed": seed, "lambda": lam,
            "threshold_split": "val", "threshold_rule": rule, "threshold": thr,
            "val_scores": [float(x) for x in val_scores[:, t]],
            "val_labels": [int(x) for x in val_labels[:, t]],
            "n_test": int(test_labels.shape[0]),
        })
    return rows, audit


def run_experiment(cfg: RunConfig, cache, architectures=None, seeds=None) -> Results:
    """Train (through ``cache``) and evaluate each architecture and seed.

    ``cache`` is a ``pipeline.ModelCache`` or anything offering
    ``scores(seed, arch, split)`` and ``cohort``.  Thresholds come from the
    validation split only and are applied unchanged to test.
    """
    from ..pipeline import split_labels

    architectures = list(cfg.architectures if architectures is None else architectures)
    seeds = list(cfg.seeds if seeds is None else seeds)
    y_val, y_test = split_labels(cache.cohort, "val"), split_labels(cache.cohort, "test")
    res = Results()
    for arch in architectures:
        for seed in seeds:
            log.info("evaluating %s seed %d", arch, seed)
            rows, audit = score_cell(
                arch, seed, cfg.train.lambda_aux,
                cache.scores(seed, arch, "val"), y_val, cache.scores(seed, arch, "test"), y_test,
            )
            res.rows += rows
            res.audit += audit
    return res


def ablate_lambda(cfg: RunConfig, cache, lambdas=None, seeds=None, architecture="trimodal+longitudinal"):
    """One train/eval per lambda and seed; returns (per-lambda median summary, Results of per-seed rows)."""
    from ..pipeline import split_labels

    lambdas = [float(x) for x in (cfg.lambdas if lambdas is None else lambdas)]
    seeds = list(cfg.seeds if seeds is None else seeds)
    y_val, y_test = split_labels(cache.cohort, "val"), split_labels(cache.cohort, "test")
    res = Results()
    for lam in lambdas:
        for seed in seeds:
            rows, audit = score_cell(
                architecture, seed, lam,
                cache.scores(seed, architecture, "val", lam), y_val,
                cache.scores(seed, architecture, "test", lam), y_test,
            )
            res.rows.append(rows[0])  # main task
            res.audit.append(audit[0])
    summary = []
    for lam in lambdas:
        rs = [r for r in res.rows if r["lambda"] == lam]
        summary.append({"lambda": lam, "n_seeds": len(rs),
                        **{k: statistics.median(r[k] for r in rs) for k in ("P", "R", "BA")}})
    return summary, res


# ---------------------------------------------------------------------------
# output files
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def to_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=1, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_results(res: Results, cfg: RunConfig, out_dir) -> tuple:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out_dir / "results.csv", out_dir / "results.json"
    csv_path.write_text(to_csv(res.rows, RESULT_COLUMNS))
    json_path.write_text(to_json({"config": cfg.echo(), "rows": res.rows, "medians": res.medians(),
                                  "audit": res.audit}))
    return csv_path, json_path


def write_ablation(summary, res: Results, cfg: RunConfig, out_dir) -> tuple:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out_dir / "ablation.csv", out_dir / "ablation.json"
    csv_path.write_text(to_csv(summary, ABLATION_COLUMNS))
    json_path.write_text(to_json({"config": cfg.echo(), "summary": summary, "rows": res.rows,
                                  "audit": res.audit}))
    return csv_path, json_path
