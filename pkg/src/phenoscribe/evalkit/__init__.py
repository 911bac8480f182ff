from .metrics import (
    ConfusionCounts,
    RocCurve,
    auc_rank,
    best_corner_ba,
    evaluate,
    metrics,
    roc_and_threshold,
    roc_curve,
)

__all__ = [
    "ConfusionCounts", "RocCurve", "auc_rank", "best_corner_ba", "evaluate", "metrics", "roc_and_threshold",
    "roc_curve",
]

from .experiment import Results, ablate_lambda, run_experiment, write_ablation, write_results  # noqa: E402

__all__ += ["Results", "ablate_lambda", "run_experiment", "write_ablation", "write_results"]
