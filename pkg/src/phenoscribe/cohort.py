"""Patients, visits, survey-derived labels and a synthetic longitudinal cohort.

The generator stands in for a private clinical dataset: one latent
severity per visit (AR(1) across arms) drives voice pitch, jitter, shimmer
and pause length in a synthesized waveform, word choice in the transcript,
and every survey item.  All three labels therefore share one factor.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import butter, lfilter, sosfilt

from .audio_io import AudioBuffer, encode_wav, load_wav, parse_wav
from .errors import BadFractions, OutOfRange

SR = 16000
SPLITS = ("train", "val", "test")
SCORE_RANGES = {"hamd": 52, "phq9_q9": 3, "phq9_q3": 3, "mfq_q19": 2, "mfq_q32": 2, "mfq_q33": 2}
HAMD_CUTOFF = 17
SI_CUTOFF = 2
SLEEP_CUTOFF = 3


@dataclass(frozen=True)
class SurveyScores:
    hamd: int
    phq9_q9: int
    phq9_q3: int
    mfq_q19: int
    mfq_q32: int
    mfq_q33: int

    def validate(self) -> "SurveyScores":
        for name, hi in SCORE_RANGES.items():
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and 0 <= v <= hi):
                raise OutOfRange(f"{name}={v!r} outside 0..{hi}")
        return self

    def to_dict(self) -> dict:
        return {k: int(getattr(self, k)) for k in SCORE_RANGES}


def label_from_surveys(s: SurveyScores, polarity: str = "severity_positive"):
    """(depression, si, sleep) as 0/1 ints; sums exactly at a cutoff are 0.

    ``polarity="severity_positive"`` marks HAM-D > 17 as depressed.
    ``"table_literal"`` follows the inverted label column instead (HAM-D < 17).
    """
    s.validate()
    if polarity == "severity_positive":
        dep = s.hamd > HAMD_CUTOFF
    elif polarity == "table_literal":
        dep = s.hamd < HAMD_CUTOFF
    else:
        raise ValueError(f"unknown polarity {polarity!r}")
    si = s.phq9_q9 + s.mfq_q19 > SI_CUTOFF
    sleep = s.phq9_q3 + s.mfq_q32 + s.mfq_q33 > SLEEP_CUTOFF
    return int(dep), int(si), int(sleep)


@dataclass
class Visit:
    patient_id: str
    arm: int
    audio: str
    transcript: str
    scores: SurveyScores
    labels: tuple
    split: str | None = None
    severity: float | None = field(default=None, compare=False)
    buffer: AudioBuffer | None = field(default=None, repr=False, compare=False)

    @property
    def key(self) -> str:
        return f"{self.patient_id}_arm{self.arm}"

    def load_audio(self, root=None) -> AudioBuffer:
        if self.buffer is not None:
            return self.buffer
        path = Path(self.audio) if root is None else Path(root) / self.audio
        return load_wav(path)

    def manifest_entry(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "arm": self.arm,
            "wav": self.audio,
            "transcript": self.transcript,
            "scores": self.scores.to_dict(),
            "labels": {"depression": self.labels[0], "si": self.labels[1], "sleep": self.labels[2]},
            "split": self.split,
        }


@dataclass
class Cohort:
    visits: list

    def __len__(self):
        return len(self.visits)

    def patients(self) -> list:
        return sorted({v.patient_id for v in self.visits})

    def by_patient(self, split=None) -> dict:
        """patient_id -> visits sorted by arm (optionally restricted to one split)."""
        out: dict = {}
        for v in self.visits:
            if split is None or v.split == split:
                out.setdefault(v.patient_id, []).append(v)
        return {k: sorted(vs, key=lambda v: v.arm) for k, vs in sorted(out.items())}

    def in_split(self, split) -> list:
        return [v for v in self.visits if v.split == split]

    def split_of(self) -> dict:
        return {v.patient_id: v.split for v in self.visits}


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def split(cohort: Cohort, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> Cohort:
    """Assign whole patients to train/val/test; floor each share, remainder to train."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions must be three nonnegative values summing to 1, got {fractions}")
    ids = cohort.patients()
    n = len(ids)
    order = np.random.default_rng(seed).permutation(n)
    n_val, n_test = int(np.floor(fractions[1] * n)), int(np.floor(fractions[2] * n))
    n_train = n - n_val - n_test
    assign = {}
    for rank, i in enumerate(order):
        assign[ids[i]] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
    return Cohort([replace(v, split=assign[v.patient_id]) for v in cohort.visits])


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------

NEUTRAL = (
    "i went to school today and we had a test in math then i walked home with my brother "
    "we talked about the weekend and the game my mom made dinner i did some homework "
    "the bus was late again and my class started a new project about rivers"
).split()
NEGATIVE = "sad tired alone hopeless worthless empty crying hurt awful nothing".split()
POSITIVE = "happy fun friends excited great laughing good enjoy".split()
FILLERS = ("um", "uh", "er", "hmm")


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def synth_transcript(rng, sev: float, n_words: int = 22) -> str:
    """Word stream whose negative-word and filler rates rise with severity in (0, 1)."""
    p_filler = 0.03 + 0.12 * sev
    p_neg = 0.03 + 0.22 * sev
    p_pos = 0.22 * (1.0 - sev)
    words = []
    for _ in range(n_words):
        u = rng.random()
        if u < p_filler:
            words.append(FILLERS[rng.integers(len(FILLERS))])
        elif u < p_filler + p_neg:
            words.append(NEGATIVE[rng.integers(len(NEGATIVE))])
        elif u < p_filler + p_neg + p_pos:
            words.append(POSITIVE[rng.integers(len(POSITIVE))])
        else:
            words.append(NEUTRAL[rng.integers(len(NEUTRAL))])
    return " ".join(words)


def pulse_train(rng, duration_s: float, f0: float, jitter: float, shimmer: float, sr: int = SR) -> np.ndarray:
    """Falling-sawtooth glottal source with per-cycle period and amplitude perturbation.

    ``jitter`` and ``shimmer`` are the half-widths of uniform relative
    perturbations applied independently to each cycle.
    """
    n = int(round(duration_s * sr))
    period = sr / f0
    n_cycles = int(np.ceil(n / (period * (1 - jitter)))) + 2
    periods = period * (1.0 + rng.uniform(-jitter, jitter, n_cycles))
    amps = 1.0 + rng.uniform(-shimmer, shimmer, n_cycles)
    bounds = np.concatenate(([0.0], np.cumsum(periods)))
    t = np.arange(n, dtype=np.float64)
    idx = np.searchsorted(bounds, t, side="right") - 1
    phase = (t - bounds[idx]) / periods[idx]
    return amps[idx] * (1.0 - 2.0 * phase)


def _envelope(n: int, ramp: int) -> np.ndarray:
    env = np.ones(n)
    ramp = min(ramp, n // 2)
    if ramp:
        r = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp], env[n - ramp:] = r, r[::-1]
    return env


_TILT = (np.array([1.0 - np.exp(-2 * np.pi * 300 / SR)]), np.array([1.0, -np.exp(-2 * np.pi * 300 / SR)]))
_FRIC = butter(8, 5200, btype="highpass", fs=SR, output="sos")


def synth_utterance(rng, sev: float, n_segments: int = 6, sr: int = SR) -> np.ndarray:
    """Voiced segments separated by pauses of 0.2 + 0.6 * sev seconds."""
    f0 = 180.0 - 25.0 * sev
    jitter = 0.005 + 0.02 * sev
    shimmer = 0.005 + 0.02 * sev
    pause = 0.2 + 0.6 * sev
    parts = [np.zeros(int(0.15 * sr))]
    for k in range(n_segments):
        if rng.random() < 0.35:
            fric = sosfilt(_FRIC, rng.standard_normal(int(rng.uniform(0.06, 0.10) * sr)))
            parts += [0.15 * fric * _envelope(fric.size, int(0.01 * sr)), np.zeros(int(0.02 * sr))]
        dur = rng.uniform(0.35, 0.7)
        seg = pulse_train(rng, dur, f0 * rng.uniform(0.97, 1.03), jitter, shimmer, sr)
        seg = lfilter(*_TILT, seg)
        parts.append(seg * _envelope(seg.size, int(0.015 * sr)))
        if k < n_segments - 1:
            parts.append(np.zeros(int(pause * rng.uniform(0.85, 1.15) * sr)))
    parts.append(np.zeros(int(0.15 * sr)))
    x = np.concatenate(parts)
    x = 0.5 * x / np.abs(x).max()
    x = x + 1e-4 * rng.standard_normal(x.size)
    return np.clip(x, -1.0, 1.0)


def synth_scores(rng, sev_effect: float, severity: float) -> SurveyScores:
    """Noisy survey items driven by sigmoid(effect_strength * severity)."""

    def item(scale, offset, noise, hi):
        return int(np.clip(np.round(scale * _sigmoid(sev_effect * severity - offset) + rng.normal(0, noise)), 0, hi))

    return SurveyScores(
        hamd=item(30.0, 0.0, 3.0, 52),
        phq9_q9=item(3.0, 1.0, 0.5, 3),
        phq9_q3=item(3.0, 0.0, 0.6, 3),
        mfq_q19=item(2.0, 1.0, 0.5, 2),
        mfq_q32=item(2.0, 0.0, 0.5, 2),
        mfq_q33=item(2.0, 0.0, 0.5, 2),
    ).validate()


def generate_cohort(seed: int, n_patients: int, n_arms: int, effect_strength: float = 3.0, polarity="severity_positive"):
    """Synthesize a cohort in memory; visit audio lives in ``Visit.buffer``."""
    visits = []
    for i in range(n_patients):
        rng = np.random.default_rng(seed ^ i)
        pid = f"P{i:04d}"
        s = rng.normal(0.0, 1.0)
        for arm in range(n_arms):
            if arm:
                s = 0.8 * s + rng.normal(0.0, 0.3)
            sev = float(_sigmoid(s))
            # round-trip through PCM16 so in-memory features equal those read back from disk
            audio = parse_wav(encode_wav(AudioBuffer(synth_utterance(rng, sev), SR)))
            text = synth_transcript(rng, sev)
            scores = synth_scores(rng, effect_strength, s)
            visits.append(
                Visit(pid, arm, f"wav/{pid}_arm{arm}.wav", text, scores, label_from_surveys(scores, polarity), None, s, audio)
            )
    return Cohort(visits)


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def write_cohort(cohort: Cohort, root, config_echo=None) -> Path:
    """Write WAVs and ``manifest.json`` under ``root``; returns the manifest path."""
    root = Path(root)
    (root / "wav").mkdir(parents=True, exist_ok=True)
    for v in cohort.visits:
        if v.buffer is not None:
            (root / v.audio).write_bytes(encode_wav(v.buffer))
    manifest = {"config": config_echo or {}, "visits": [v.manifest_entry() for v in cohort.visits]}
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return path


def read_cohort(root) -> Cohort:
    root = Path(root)
    data = json.loads((root / "manifest.json").read_text())
    visits = []
    for e in data["visits"]:
        scores = SurveyScores(**e["scores"])
        lab = e["labels"]
        visits.append(
            Visit(e["patient_id"], int(e["arm"]), e["wav"], e["transcript"], scores,
                  (int(lab["depression"]), int(lab["si"]), int(lab["sleep"])), e.get("split"))
        )
    return Cohort(visits)
