"""Run configuration: nested dataclasses with strict JSON loading.

Unknown keys are rejected at every nesting level.  ``to_dict`` output is
what gets echoed into checkpoints and results files.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

ARCHITECTURES = ("text", "text+landmarks", "trimodal", "trimodal+longitudinal")
TASKS = ("depression", "si", "sleep")


@dataclass
class DspConfig:
    sample_rate: int = 16000
    # landmark band layout (Hz) and STFT
    band_edges: list = field(
        default_factory=lambda: [[0, 400], [800, 1500], [1200, 2000], [2000, 3500], [3500, 5000], [5000, 8000]]
    )
    stft_win_s: float = 0.025
    stft_hop_s: float = 0.010
    n_fft: int = 512
    floor_db: float = -120.0
    coarse_smooth_s: float = 0.050
    fine_smooth_s: float = 0.020
    coarse_threshold_db: float = 6.0
    fine_threshold_db: float = 9.0
    confirm_window_s: float = 0.050
    cluster_window_s: float = 0.030
    # band 1 counts as "high" (voiced) when it exceeds every other band by this margin
    voicing_margin_db: float = 6.0
    # band events more than this far below the loudest band are ignored
    audible_range_db: float = 50.0
    periodicity_win_s: float = 0.040
    # shared by landmark periodicity and biomarker voicing
    voicing_threshold: float = 0.4
    f0_min_hz: float = 50.0
    f0_max_hz: float = 500.0
    # biomarkers
    window_s: float = 0.5
    n_mfcc: int = 13
    n_mels: int = 26
    mfcc_win_s: float = 0.025
    mfcc_hop_s: float = 0.010
    pause_frame_s: float = 0.010
    pause_min_s: float = 0.300
    pause_floor_percentile: float = 5.0
    pause_margin_db: float = 10.0
    # utterances with less dynamic range than this are all-speech or all-silence
    pause_min_range_db: float = 20.0
    silence_abs_db: float = -60.0
    fillers: list = field(default_factory=lambda: ["um", "uh", "er", "hmm"])


@dataclass
class ModelConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    bio_layers: int = 2
    bio_positional: bool = True
    lora_r: int = 4
    lora_alpha: float = 8.0
    lora_targets: list = field(default_factory=lambda: ["q", "v"])
    prompt_len: int = 8
    max_text_tokens: int = 160
    max_landmark_tokens: int = 64
    task_prompt: str = "predict depression, suicidal ideation, sleep:"
    instruction_version: str = "v1"
    fusion: str = "embedding"  # or "probability"


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 200
    patience: int = 20
    lambda_aux: float = 0.25
    w_plus_mode: str = "auto"  # or "explicit"
    w_plus: list = field(default_factory=lambda: [1.0, 1.0, 1.0])
    pretrain_epochs: int = 6
    pretrain_lr: float = 3e-3
    crossmodal_epochs: int = 8
    crossmodal_lr: float = 1e-2
    crossmodal_batch: int = 4
    ptune_epochs: int = 30
    ptune_lr: float = 3e-2
    lm_batch: int = 16


@dataclass
class CohortConfig:
    patients: int = 60
    arms: int = 4
    effect_strength: float = 3.0
    fractions: list = field(default_factory=lambda: [0.6, 0.2, 0.2])


@dataclass
class RunConfig:
    seed: int = 0
    seeds: list = field(default_factory=lambda: [0])
    workdir: str = "."
    cohort_dir: str = "cohort"
    cache_dir: str = "cache"
    checkpoint_dir: str = "checkpoints"
    results_dir: str = "results"
    architecture: str = "trimodal+longitudinal"
    architectures: list = field(default_factory=lambda: list(ARCHITECTURES))
    mode: str = "longitudinal"  # or "cross_sectional"
    lambdas: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    dsp: DspConfig = field(default_factory=DspConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cohort: CohortConfig = field(default_factory=CohortConfig)

    def validate(self) -> "RunConfig":
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        bad = [a for a in self.architectures if a not in ARCHITECTURES]
        if bad:
            raise ConfigError(f"unknown architectures {bad}")
        if self.mode not in ("longitudinal", "cross_sectional"):
            raise ConfigError(f"mode must be longitudinal or cross_sectional, got {self.mode!r}")
        if self.model.fusion not in ("embedding", "probability"):
            raise ConfigError(f"fusion must be embedding or probability, got {self.model.fusion!r}")
        if not 0.0 <= self.train.lambda_aux <= 1.0:
            raise ConfigError("lambda_aux must lie in [0, 1]")
        if any(not 0.0 <= lam <= 1.0 for lam in self.lambdas):
            raise ConfigError("every ablation lambda must lie in [0, 1]")
        if self.train.w_plus_mode not in ("auto", "explicit"):
            raise ConfigError("w_plus_mode must be auto or explicit")
        if len(self.train.w_plus) != 3 or any(w <= 0 for w in self.train.w_plus):
            raise ConfigError("w_plus needs three positive weights")
        if self.model.d_model % self.model.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")
        if self.cohort.patients < 0 or self.cohort.arms < 0:
            raise ConfigError("patients and arms must be nonnegative")
        if len(self.cohort.fractions) != 3 or abs(sum(self.cohort.fractions) - 1.0) > 1e-9:
            raise ConfigError("split fractions must be three values summing to 1")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def echo(self) -> dict:
        """Config as embedded in output artifacts; ``workdir`` is left out so outputs do not depend on location."""
        out = self.to_dict()
        del out["workdir"]
        return out

    def path(self, name: str) -> Path:
        return Path(self.workdir) / getattr(self, name)


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config keys at {where or 'top level'}: {unknown}")
    kwargs = {}
    for name, value in data.items():
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}".lstrip("."))
        else:
            kwargs[name] = value
    return cls(**kwargs)


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "").validate()


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return from_dict(data)


def merge(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Apply dotted-key overrides (``{"train.lambda_aux": 0.5}``)."""
    data = cfg.to_dict()
    for key, value in overrides.items():
        node = data
        *parents, leaf = key.split(".")
        for p in parents:
            node = node[p]
        if leaf not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[leaf] = value
    return from_dict(data)
