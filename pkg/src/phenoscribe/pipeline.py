"""Feature extraction and per-architecture training shared by the experiment drivers and the CLI.

Architectures:

- ``text``: base LM P-tuned on transcripts.
- ``text+landmarks``: base LM, LoRA cross-modal stage, then P-tuned on transcript + landmarks.
- ``trimodal``: frozen text+landmarks embeddings fused with the biomarker encoder, arms independent.
- ``trimodal+longitudinal``: as ``trimodal`` with the GRU carrying state across arms.
"""
from __future__ import annotations

import copy
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import biomarkers, landmarks
from .cohort import Cohort
from .config import RunConfig
from .errors import MissingPrerequisite, PhenoscribeError
from .fusion_mtl import FusionModel, VisitFeatures, mtl_train, predict
from .lm_adapter import PhenoLM, crossmodal_finetune, embed_many, p_tune, predict_probs, pretrain_base
from .mtl_loss import positive_weights

log = logging.getLogger(__name__)

TEXT, TEXT_LANDMARKS, TRIMODAL, LONGITUDINAL = "text", "text+landmarks", "trimodal", "trimodal+longitudinal"


def uses_landmarks(arch: str) -> bool:
    return arch != TEXT


def is_fusion(arch: str) -> bool:
    return arch in (TRIMODAL, LONGITUDINAL)


def fusion_mode(arch: str, cfg: RunConfig) -> str:
    """Plain ``trimodal`` treats arms independently; the longitudinal variant follows ``cfg.mode``."""
    return "cross_sectional" if arch == TRIMODAL else cfg.mode


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("PHENOSCRIBE_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------

@dataclass
class Features:
    landmarks: dict = field(default_factory=dict)  # visit key -> tuple of symbols
    bio: dict = field(default_factory=dict)  # visit key -> (n_windows, 37) matrix


def extract_visit(visit, root, cfg: RunConfig):
    buf = visit.load_audio(root)
    return landmarks.extract_landmarks(buf, cfg.dsp), biomarkers.extract_series(buf, visit.transcript, cfg.dsp)


def extract_all(cohort: Cohort, cfg: RunConfig, root=None, threads=None):
    """Run extraction for every visit; returns ({key: (LandmarkSequence, BiomarkerSeries)}, {key: error})."""
    threads = thread_count() if threads is None else threads

    def one(v):
        try:
            return v.key, extract_visit(v, root, cfg), None
        except (PhenoscribeError, OSError) as exc:
            return v.key, None, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, cohort.visits))
    else:
        results = [one(v) for v in cohort.visits]
    done = {k: r for k, r, e in results if e is None}
    errors = {k: e for k, _, e in results if e is not None}
    return done, errors


def features_from(extracted: dict) -> Features:
    feats = Features()
    for key, (seq, series) in extracted.items():
        feats.landmarks[key] = seq.symbols
        feats.bio[key] = series.matrix()
    return feats


def cache_paths(cache_dir, key):
    cache_dir = Path(cache_dir)
    return cache_dir / "landmarks" / f"{key}.lm", cache_dir / "biomarkers" / key


def write_cache(cache_dir, key, seq, series) -> None:
    lm_path, stem = cache_paths(cache_dir, key)
    lm_path.parent.mkdir(parents=True, exist_ok=True)
    stem.parent.mkdir(parents=True, exist_ok=True)
    landmarks.save_landmarks(lm_path, seq)
    biomarkers.save_series(stem, series)


def load_features(cohort: Cohort, cache_dir) -> Features:
    feats = Features()
    for v in cohort.visits:
        lm_path, stem = cache_paths(cache_dir, v.key)
        if not lm_path.is_file() or not stem.with_suffix(".csv").is_file():
            raise MissingPrerequisite(f"no cached features for {v.key}; run extract first")
        feats.landmarks[v.key] = landmarks.load_landmarks(lm_path).symbols
        feats.bio[v.key] = biomarkers.load_series(stem).matrix()
    return feats


# ---------------------------------------------------------------------------
# language-model stages
# ---------------------------------------------------------------------------

def _sorted(visits):
    return sorted(visits, key=lambda v: (v.patient_id, v.arm))


def lm_items(visits, feats: Features, with_landmarks: bool):
    return [(v.transcript, feats.landmarks[v.key] if with_landmarks else None) for v in visits]


def train_base(cohort: Cohort, feats: Features, cfg: RunConfig, seed: int) -> PhenoLM:
    train = _sorted(cohort.in_split("train"))
    model = PhenoLM(cfg.model, seed)
    pretrain_base(
        model, [v.transcript for v in train], cfg.train.pretrain_epochs, cfg.train, seed,
        [feats.landmarks[v.key] for v in train],
    )
    return model


def train_crossmodal(base: PhenoLM, cohort: Cohort, feats: Features, cfg: RunConfig, seed: int) -> PhenoLM:
    model = copy.deepcopy(base)
    corpus = lm_items(_sorted(cohort.in_split("train")), feats, True)
    crossmodal_finetune(model, corpus, cfg.train.crossmodal_epochs, cfg.train, seed)
    model.freeze()
    return model


def task_weights(labels, cfg: RunConfig):
    return positive_weights(labels) if cfg.train.w_plus_mode == "auto" else list(cfg.train.w_plus)


def train_ptune(lm: PhenoLM, cohort: Cohort, feats: Features, cfg: RunConfig, seed: int, with_landmarks: bool):
    model = copy.deepcopy(lm)
    train = _sorted(cohort.in_split("train"))
    labels = np.array([v.labels for v in train], dtype=float)
    examples = [(t, lms, y) for (t, lms), y in zip(lm_items(train, feats, with_landmarks), labels)]
    p_tune(model, examples, cfg.train.ptune_epochs, cfg.train, seed, w_plus=task_weights(labels, cfg))
    return model


# ---------------------------------------------------------------------------
# fusion stage
# ---------------------------------------------------------------------------

def lm_embeddings(lm: PhenoLM, cohort: Cohort, feats: Features) -> dict:
    visits = _sorted(cohort.visits)
    emb = embed_many(lm, lm_items(visits, feats, True))
    return {v.key: e for v, e in zip(visits, emb)}


def trajectories(cohort: Cohort, split: str, feats: Features, emb: dict):
    return [
        [VisitFeatures(v.arm, emb[v.key], feats.bio[v.key], tuple(v.labels)) for v in visits]
        for visits in cohort.by_patient(split).values()
    ]


def train_fusion(emb: dict, cohort: Cohort, feats: Features, cfg: RunConfig, seed: int, mode: str, lambda_aux=None):
    train = trajectories(cohort, "train", feats, emb)
    val = trajectories(cohort, "val", feats, emb)
    return mtl_train(train, val, cfg.model, cfg.train, seed, mode=mode, lambda_aux=lambda_aux)


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

def split_visits(cohort: Cohort, split: str):
    """Visits of a split in the canonical (patient, arm) order used for every score array."""
    return [v for visits in cohort.by_patient(split).values() for v in visits]


def split_labels(cohort: Cohort, split: str) -> np.ndarray:
    return np.array([v.labels for v in split_visits(cohort, split)], dtype=int).reshape(-1, 3)


def lm_scores(model: PhenoLM, cohort: Cohort, feats: Features, split: str, with_landmarks: bool) -> np.ndarray:
    return predict_probs(model, lm_items(split_visits(cohort, split), feats, with_landmarks))


def fusion_scores(model: FusionModel, cohort: Cohort, feats: Features, emb: dict, split: str) -> np.ndarray:
    return predict(model, trajectories(cohort, split, feats, emb))


class ModelCache:
    """Trains each stage once per seed and hands out shared frozen copies.

    Stages are deterministic functions of (cohort, features, config, seed),
    so reuse across architectures changes nothing but runtime.
    """

    def __init__(self, cohort: Cohort, feats: Features, cfg: RunConfig):
        self.cohort, self.feats, self.cfg = cohort, feats, cfg
        self._store: dict = {}

    def _get(self, key, build):
        if key not in self._store:
            self._store[key] = build()
        return self._store[key]

    def base(self, seed):
        return self._get(("base", seed), lambda: train_base(self.cohort, self.feats, self.cfg, seed))

    def crossmodal(self, seed):
        return self._get(
            ("crossmodal", seed), lambda: train_crossmodal(self.base(seed), self.cohort, self.feats, self.cfg, seed)
        )

    def ptuned(self, seed, arch):
        with_lm = uses_landmarks(arch)
        key = ("ptune", seed, with_lm)
        parent = (lambda: self.crossmodal(seed)) if with_lm else (lambda: self.base(seed))
        return self._get(key, lambda: train_ptune(parent(), self.cohort, self.feats, self.cfg, seed, with_lm))

    def embeddings(self, seed):
        return self._get(
            ("emb", seed), lambda: lm_embeddings(self.ptuned(seed, TEXT_LANDMARKS), self.cohort, self.feats)
        )

    def fusion(self, seed, arch, lambda_aux=None):
        lam = self.cfg.train.lambda_aux if lambda_aux is None else lambda_aux
        return self._get(
            ("fusion", seed, arch, float(lam)),
            lambda: train_fusion(
                self.embeddings(seed), self.cohort, self.feats, self.cfg, seed, fusion_mode(arch, self.cfg), lam
            ),
        )

    def scores(self, seed, arch, split, lambda_aux=None) -> np.ndarray:
        if is_fusion(arch):
            model, _ = self.fusion(seed, arch, lambda_aux)
            return fusion_scores(model, self.cohort, self.feats, self.embeddings(seed), split)
        return lm_scores(self.ptuned(seed, arch), self.cohort, self.feats, split, uses_landmarks(arch))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

STAGE_PREFIXES = {"base": ("lm.",), "crossmodal": ("lm.", "lora."), "ptune": ("prompt.", "clf.")}


def checkpoint_name(stage: str, seed: int, arch: str | None = None) -> str:
    if stage == "ptune":
        stage = f"ptune_{'text_landmarks' if uses_landmarks(arch) else 'text'}"
    elif stage == "fusion":
        stage = f"fusion_{arch.replace('+', '_')}"
    return f"{stage}_seed{seed}.ckpt"


def encode_stage(model, stage: str, cfg: RunConfig, seed: int, arch=None, extra=None) -> bytes:
    from .nn import encode_checkpoint

    if stage == "fusion":
        named = list(model.named_parameters())
    else:
        named = [(n, p) for n, p in model.named_parameters() if n.startswith(STAGE_PREFIXES[stage])]
    meta = {"stage": stage, "seed": seed, "architecture": arch}
    meta.update(extra or {})
    return encode_checkpoint(named, cfg.echo(), meta)


class CheckpointCache(ModelCache):
    """ModelCache whose language-model stages (and optionally fusion) come from checkpoint files."""

    def __init__(self, cohort, feats, cfg, ckpt_dir, fusion_from_disk=True):
        super().__init__(cohort, feats, cfg)
        self.ckpt_dir = Path(ckpt_dir)
        self.fusion_from_disk = fusion_from_disk

    def _load(self, name):
        from .errors import MissingCheckpoint
        from .nn import load_checkpoint

        path = self.ckpt_dir / name
        if not path.is_file():
            raise MissingCheckpoint(f"missing checkpoint {path}")
        return load_checkpoint(path)[1]

    def _restore(self, model, arrays, prefixes):
        from .nn import restore

        restore([(n, p) for n, p in model.named_parameters() if n.startswith(prefixes)], arrays)
        model.freeze()
        return model

    def base(self, seed):
        def build():
            return self._restore(PhenoLM(self.cfg.model, seed), self._load(checkpoint_name("base", seed)), ("lm.",))
        return self._get(("base", seed), build)

    def crossmodal(self, seed):
        def build():
            model = PhenoLM(self.cfg.model, seed)
            model.attach_lora()
            return self._restore(model, self._load(checkpoint_name("crossmodal", seed)), ("lm.", "lora."))
        return self._get(("crossmodal", seed), build)

    def ptuned(self, seed, arch):
        with_lm = uses_landmarks(arch)

        def build():
            arrays = self._load(checkpoint_name("ptune", seed, arch))
            parent = self.crossmodal(seed) if with_lm else self.base(seed)
            return self._restore(copy.deepcopy(parent), arrays, ("prompt.", "clf."))
        return self._get(("ptune", seed, with_lm), build)

    def fusion(self, seed, arch, lambda_aux=None):
        if not self.fusion_from_disk:
            return super().fusion(seed, arch, lambda_aux)

        def build():
            from .nn import restore

            model = FusionModel(self.cfg.model, seed, fusion_mode(arch, self.cfg))
            restore(list(model.named_parameters()), self._load(checkpoint_name("fusion", seed, arch)))
            model.freeze()
            return model, {}
        lam = self.cfg.train.lambda_aux if lambda_aux is None else lambda_aux
        return self._get(("fusion", seed, arch, float(lam)), build)
