"""Command-line pipeline: synth -> extract -> train (crossmodal, ptune, fusion) -> eval / ablate.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import biomarkers, landmarks, pipeline
from .cohort import generate_cohort, read_cohort, split, write_cohort
from .config import ARCHITECTURES, RunConfig, from_dict, load_config, merge
from .errors import ConfigError, MissingPrerequisite, OutputExists, PhenoscribeError
from .evalkit.experiment import ablate_lambda, run_experiment, to_csv, to_json, ABLATION_COLUMNS, RESULT_COLUMNS

log = logging.getLogger("phenoscribe")


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _nonneg_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {value}")
    return value


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# flag dest -> dotted config key
OVERRIDES = {
    "seed": "seed",
    "seeds": "seeds",
    "patients": "cohort.patients",
    "arms": "cohort.arms",
    "effect_strength": "cohort.effect_strength",
    "architecture": "architecture",
    "architectures": "architectures",
    "mode": "mode",
    "lambda_aux": "train.lambda_aux",
    "lambdas": "lambdas",
    "epochs": "train.epochs",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workdir", default=None, help="root for every relative path (default: current dir)")
    common.add_argument("--config", help="JSON run config; command-line flags override it")
    common.add_argument("--force", action="store_true", help="overwrite outputs whose content would change")
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("--seed", type=int, help="cohort seed")
    common.add_argument("--seeds", type=_int_list, help="model seeds, e.g. 0,1,2")

    p = argparse.ArgumentParser(prog="phenoscribe", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    s.add_argument("--patients", type=_nonneg_int)
    s.add_argument("--arms", type=_nonneg_int)
    s.add_argument("--effect-strength", type=float)

    e = sub.add_parser("extract", parents=[common], help="landmark and biomarker feature cache")
    e.add_argument("--kind", choices=("landmarks", "biomarkers", "all"), default="all")

    t = sub.add_parser("train", parents=[common], help="train one stage")
    t.add_argument("--stage", choices=("crossmodal", "ptune", "fusion"), required=True)
    t.add_argument("--architecture", choices=ARCHITECTURES)
    t.add_argument("--mode", choices=("longitudinal", "cross_sectional"))
    t.add_argument("--lambda-aux", type=float)
    t.add_argument("--epochs", type=_nonneg_int, help="fusion epochs")

    v = sub.add_parser("eval", parents=[common], help="evaluate trained checkpoints")
    v.add_argument("--architectures", type=lambda s: [a for a in s.split(",") if a])
    v.add_argument("--mode", choices=("longitudinal", "cross_sectional"))

    a = sub.add_parser("ablate", parents=[common], help="auxiliary-weight ablation")
    a.add_argument("--lambdas", type=_float_list)
    a.add_argument("--mode", choices=("longitudinal", "cross_sectional"))
    a.add_argument("--epochs", type=_nonneg_int, help="fusion epochs")
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else from_dict({})
    overrides = {key: getattr(args, dest) for dest, key in OVERRIDES.items() if getattr(args, dest, None) is not None}
    if args.workdir is not None:
        overrides["workdir"] = args.workdir
    return merge(cfg, overrides) if overrides else cfg


# ---------------------------------------------------------------------------
# output handling
# ---------------------------------------------------------------------------

def commit_outputs(files: dict, force: bool) -> None:
    """Write ``{path: bytes}``; refuse (writing nothing) if any existing file would change without --force.

    Rewriting a file with identical bytes is not an overwrite, so reruns are idempotent.
    """
    changed = [p for p, data in files.items() if Path(p).exists() and Path(p).read_bytes() != data]
    if changed and not force:
        shown = ", ".join(str(p) for p in changed[:3])
        raise OutputExists(f"{len(changed)} output file(s) would change ({shown}); pass --force to overwrite")
    for p, data in files.items():
        Path(p).parent.mkdir(parents=True, exist_ok=True)
        Path(p).write_bytes(data)


def _cohort(cfg: RunConfig):
    root = cfg.path("cohort_dir")
    if not (root / "manifest.json").is_file():
        raise MissingPrerequisite(f"no cohort at {root}; run synth first")
    return read_cohort(root), root


def _features(cfg: RunConfig):
    cohort, _ = _cohort(cfg)
    return cohort, pipeline.load_features(cohort, cfg.path("cache_dir"))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, force: bool) -> int:
    from .audio_io import encode_wav

    c = cfg.cohort
    cohort = split(generate_cohort(cfg.seed, c.patients, c.arms, c.effect_strength), c.fractions, cfg.seed)
    root = cfg.path("cohort_dir")
    files = {root / v.audio: encode_wav(v.buffer) for v in cohort.visits}
    manifest = {"config": cfg.echo(), "visits": [v.manifest_entry() for v in cohort.visits]}
    files[root / "manifest.json"] = (json.dumps(manifest, sort_keys=True, indent=1) + "\n").encode()
    commit_outputs(files, force)
    root.mkdir(parents=True, exist_ok=True)
    print(f"synth: {len(cohort.visits)} visits from {len(cohort.patients())} patients -> {root}")
    return 0


def cmd_extract(cfg: RunConfig, kind: str, force: bool) -> int:
    cohort, root = _cohort(cfg)
    cache = cfg.path("cache_dir")
    done, errors = pipeline.extract_all(cohort, cfg, root)
    files = {}
    for key, (seq, series) in sorted(done.items()):
        lm_path, stem = pipeline.cache_paths(cache, key)
        if kind in ("landmarks", "all"):
            files[lm_path] = landmarks.dump_landmarks(seq).encode()
        if kind in ("biomarkers", "all"):
            files[stem.with_suffix(".csv")] = biomarkers.series_to_csv(series).encode()
            files[stem.with_suffix(".json")] = biomarkers.stats_to_json(series.stats).encode()
    report = {"config": cfg.echo(), "kind": kind, "visits": sorted(done), "errors": dict(sorted(errors.items()))}
    files[cache / "extract_manifest.json"] = to_json(report).encode()
    commit_outputs(files, force)
    print(f"extract: {len(done)} ok, {len(errors)} failed -> {cache}")
    for key, msg in sorted(errors.items()):
        print(f"  {key}: {msg}", file=sys.stderr)
    return 1 if errors else 0


def cmd_train(cfg: RunConfig, stage: str, force: bool) -> int:
    cohort, feats = _features(cfg)
    arch = cfg.architecture
    ckpt = cfg.path("checkpoint_dir")
    files = {}
    for seed in cfg.seeds:
        if stage == "crossmodal":
            base = pipeline.train_base(cohort, feats, cfg, seed)
            model = pipeline.train_crossmodal(base, cohort, feats, cfg, seed)
            files[ckpt / pipeline.checkpoint_name("base", seed)] = pipeline.encode_stage(base, "base", cfg, seed)
            files[ckpt / pipeline.checkpoint_name("crossmodal", seed)] = pipeline.encode_stage(
                model, "crossmodal", cfg, seed)
        elif stage == "ptune":
            store = pipeline.CheckpointCache(cohort, feats, cfg, ckpt)
            if pipeline.uses_landmarks(arch):
                if not (ckpt / pipeline.checkpoint_name("crossmodal", seed)).is_file():
                    raise MissingPrerequisite(f"architecture {arch} needs `train --stage crossmodal` first")
                parent = store.crossmodal(seed)
            elif (ckpt / pipeline.checkpoint_name("base", seed)).is_file():
                parent = store.base(seed)
            else:
                parent = pipeline.train_base(cohort, feats, cfg, seed)
                files[ckpt / pipeline.checkpoint_name("base", seed)] = pipeline.encode_stage(parent, "base", cfg, seed)
            model = pipeline.train_ptune(parent, cohort, feats, cfg, seed, pipeline.uses_landmarks(arch))
            files[ckpt / pipeline.checkpoint_name("ptune", seed, arch)] = pipeline.encode_stage(
                model, "ptune", cfg, seed, arch)
        else:
            if not pipeline.is_fusion(arch):
                raise ConfigError(f"fusion stage needs a trimodal architecture, got {arch!r}")
            for need in (pipeline.checkpoint_name("crossmodal", seed),
                         pipeline.checkpoint_name("ptune", seed, pipeline.TEXT_LANDMARKS)):
                if not (ckpt / need).is_file():
                    raise MissingPrerequisite(f"fusion needs {need}; run the crossmodal and ptune stages first")
            store = pipeline.CheckpointCache(cohort, feats, cfg, ckpt, fusion_from_disk=False)
            model, info = store.fusion(seed, arch)
            mode = pipeline.fusion_mode(arch, cfg)
            extra = {"mode": mode, "gru_bypass": mode == "cross_sectional", "w_plus": info["w_plus"],
                     "best_epoch": info["best_epoch"], "lambda_aux": cfg.train.lambda_aux}
            files[ckpt / pipeline.checkpoint_name("fusion", seed, arch)] = pipeline.encode_stage(
                model, "fusion", cfg, seed, arch, extra)
    commit_outputs(files, force)
    for p in sorted(files):
        print(f"train: wrote {p}")
    return 0


def cmd_eval(cfg: RunConfig, force: bool) -> int:
    cohort, feats = _features(cfg)
    store = pipeline.CheckpointCache(cohort, feats, cfg, cfg.path("checkpoint_dir"))
    res = run_experiment(cfg, store)
    out = cfg.path("results_dir")
    payload = {"config": cfg.echo(), "rows": res.rows, "medians": res.medians(), "audit": res.audit}
    commit_outputs({out / "results.csv": to_csv(res.rows, RESULT_COLUMNS).encode(),
                    out / "results.json": to_json(payload).encode()}, force)
    print(to_csv(res.rows, RESULT_COLUMNS), end="")
    return 0


def cmd_ablate(cfg: RunConfig, force: bool) -> int:
    cohort, feats = _features(cfg)
    store = pipeline.CheckpointCache(cohort, feats, cfg, cfg.path("checkpoint_dir"), fusion_from_disk=False)
    summary, res = ablate_lambda(cfg, store)
    out = cfg.path("results_dir")
    payload = {"config": cfg.echo(), "summary": summary, "rows": res.rows, "audit": res.audit}
    commit_outputs({out / "ablation.csv": to_csv(summary, ABLATION_COLUMNS).encode(),
                    out / "ablation.json": to_json(payload).encode()}, force)
    print(to_csv(summary, ABLATION_COLUMNS), end="")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "synth":
            return cmd_synth(cfg, args.force)
        if args.command == "extract":
            return cmd_extract(cfg, args.kind, args.force)
        if args.command == "train":
            return cmd_train(cfg, args.stage, args.force)
        if args.command == "eval":
            return cmd_eval(cfg, args.force)
        return cmd_ablate(cfg, args.force)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PhenoscribeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
