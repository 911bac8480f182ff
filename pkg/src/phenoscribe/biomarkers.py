"""Per-window vocal biomarkers and utterance-level durational statistics.

Windows are 500 ms, non-overlapping; a trailing partial window is dropped.
All pitch-related quantities come from one normalized-autocorrelation
analysis so voicing decisions agree with the landmark periodicity track.
"""
from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct
from scipy.signal import get_window

from . import kernels
from .audio_io import AudioBuffer
from .config import DspConfig
from .errors import InsufficientCycles, TooShort, Unvoiced

R_CLAMP = 1e-6
LOG_FLOOR = 1e-10

FIELD_NAMES = (
    ["intensity_db"]
    + [f"mfcc_{i}" for i in range(13)]
    + [f"delta_mfcc_{i}" for i in range(13)]
    + ["f0_hz", "zcr", "hnr_db", "jitter", "shimmer", "energy"]
)
STAT_NAMES = ("pause_count", "total_pause_s", "phonation_rate", "filler_count")


@dataclass(frozen=True, eq=False)
class BiomarkerWindow:
    intensity_db: float
    mfcc: np.ndarray
    delta_mfcc: np.ndarray
    f0_hz: float | None
    zcr: float
    hnr_db: float
    jitter: float
    shimmer: float
    energy: float

    @property
    def voiced(self) -> bool:
        return self.f0_hz is not None

    def as_vector(self) -> np.ndarray:
        """33 numbers in FIELD_NAMES order; an absent F0 reads as 0."""
        return np.concatenate(
            [
                [self.intensity_db],
                self.mfcc,
                self.delta_mfcc,
                [self.f0_hz or 0.0, self.zcr, self.hnr_db, self.jitter, self.shimmer, self.energy],
            ]
        )


@dataclass(frozen=True)
class UtteranceStats:
    pause_count: int
    total_pause_s: float
    phonation_rate: float
    filler_count: int

    def as_vector(self) -> np.ndarray:
        return np.array([self.pause_count, self.total_pause_s, self.phonation_rate, self.filler_count], float)

    @property
    def mean_pause_s(self) -> float:
        return self.total_pause_s / self.pause_count if self.pause_count else 0.0


@dataclass(frozen=True, eq=False)
class BiomarkerSeries:
    windows: tuple
    stats: UtteranceStats
    window_s: float = 0.5

    def __len__(self):
        return len(self.windows)

    def matrix(self) -> np.ndarray:
        """(n_windows, 37): window features with utterance stats broadcast."""
        if not self.windows:
            return np.zeros((0, len(FIELD_NAMES) + len(STAT_NAMES)))
        rows = np.stack([w.as_vector() for w in self.windows])
        stats = np.broadcast_to(self.stats.as_vector(), (rows.shape[0], len(STAT_NAMES)))
        return np.hstack([rows, stats])


# ---------------------------------------------------------------------------
# pitch
# ---------------------------------------------------------------------------

def _lag_bounds(sr: int, cfg: DspConfig):
    return int(sr // cfg.f0_max_hz), int(np.ceil(sr / cfg.f0_min_hz))


def pitch_analysis(x, sr: int = 16000, cfg: DspConfig = DspConfig()):
    """Return (lag_in_samples, peak_ratio) of the strongest period, or (None, peak_ratio).

    The first local maximum within 90% of the global maximum is taken, so a
    clean periodic signal does not lock onto a multiple of its period.
    """
    lo, hi = _lag_bounds(sr, cfg)
    r = kernels.autocorr(x, lo, hi)
    if r.size < 3:
        return None, 0.0
    best = float(r.max())
    if best <= cfg.voicing_threshold:
        return None, max(best, 0.0)
    k = int(np.argmax(r))
    for i in range(1, r.size - 1):
        if r[i] >= 0.9 * best and r[i] >= r[i - 1] and r[i] >= r[i + 1]:
            k = i
            break
    lag, peak = float(k + lo), float(r[k])
    if 0 < k < r.size - 1:
        a, b, c = r[k - 1], r[k], r[k + 1]
        denom = a - 2 * b + c
        if denom < 0:
            delta = 0.5 * (a - c) / denom
            lag += delta
            peak = float(b - 0.25 * (a - c) * delta)
    f0 = sr / lag
    if not cfg.f0_min_hz <= f0 <= cfg.f0_max_hz:
        return None, peak
    return lag, peak


def compute_f0(x, sr: int = 16000, cfg: DspConfig = DspConfig()) -> float | None:
    lag, _ = pitch_analysis(x, sr, cfg)
    return None if lag is None else sr / lag


def hnr_from_r(r: float) -> float:
    r = min(max(float(r), R_CLAMP), 1.0 - R_CLAMP)
    return 10.0 * np.log10(r / (1.0 - r))


def compute_hnr(x, sr: int = 16000, cfg: DspConfig = DspConfig()) -> float:
    lag, peak = pitch_analysis(x, sr, cfg)
    if lag is None:
        raise Unvoiced("no periodicity above the voicing threshold")
    return hnr_from_r(peak)


def _active_span(x, sr: int):
    """Longest run of 10 ms frames within 20 dB of the loudest frame."""
    hop = max(sr // 100, 1)
    n = len(x) // hop
    if n == 0:
        return 0, len(x)
    rms = np.sqrt(np.mean(x[: n * hop].reshape(n, hop) ** 2, axis=1))
    active = rms >= 0.1 * rms.max() if rms.max() > 0 else np.zeros(n, bool)
    best, start, run_start = (0, 0), None, None
    for i, a in enumerate(np.append(active, False)):
        if a and run_start is None:
            run_start = i
        elif not a and run_start is not None:
            if i - run_start > best[1] - best[0]:
                best = (run_start, i)
            run_start = None
    return best[0] * hop, best[1] * hop


def compute_jitter_shimmer(x, f0: float, sr: int = 16000):
    """Relative cycle-to-cycle variation of period (jitter) and peak amplitude (shimmer)."""
    x = np.asarray(x, dtype=np.float64)
    a, b = _active_span(x, sr)
    pos, amp = kernels.track_cycle_peaks(x[a:b], sr / f0)
    periods = np.diff(pos)
    if periods.size < 3:
        raise InsufficientCycles(f"found {periods.size} pitch periods, need at least 3")
    jitter = float(np.mean(np.abs(np.diff(periods))) / np.mean(periods))
    mean_amp = np.mean(amp)
    shimmer = float(np.mean(np.abs(np.diff(amp))) / mean_amp) if mean_amp > 0 else 0.0
    return jitter, shimmer


# ---------------------------------------------------------------------------
# spectral
# ---------------------------------------------------------------------------

def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


_FILTERBANKS: dict = {}


def mel_filterbank(n_mels: int, n_fft: int, sr: int, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters on the HTK mel scale, shape (n_mels, n_fft//2 + 1)."""
    key = (n_mels, n_fft, sr, fmin, fmax)
    if key in _FILTERBANKS:
        return _FILTERBANKS[key]
    fmax = sr / 2 if fmax is None else fmax
    hz = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sr)
    fb = np.zeros((n_mels, freqs.size))
    for m in range(n_mels):
        left, centre, right = hz[m], hz[m + 1], hz[m + 2]
        up = (freqs - left) / (centre - left)
        down = (right - freqs) / (right - centre)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    _FILTERBANKS[key] = fb
    return fb


def _delta(feat: np.ndarray, width: int = 2) -> np.ndarray:
    """Regression deltas over +-width frames with edge padding."""
    padded = np.pad(feat, ((width, width), (0, 0)), mode="edge")
    n = feat.shape[0]
    num = sum(k * (padded[width + k: width + k + n] - padded[width - k: width - k + n]) for k in range(1, width + 1))
    return num / (2 * sum(k * k for k in range(1, width + 1)))


def mfcc_frames(x, sr: int = 16000, cfg: DspConfig = DspConfig()) -> np.ndarray:
    win = int(round(cfg.mfcc_win_s * sr))
    hop = int(round(cfg.mfcc_hop_s * sr))
    n_fft = 1 << int(np.ceil(np.log2(win)))
    n = (len(x) - win) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(np.asarray(x, np.float64), win)[::hop][:n]
    power = np.abs(np.fft.rfft(frames * get_window("hamming", win), n_fft, axis=1)) ** 2
    mel = power @ mel_filterbank(cfg.n_mels, n_fft, sr).T
    return dct(np.log(np.maximum(mel, LOG_FLOOR)), type=2, norm="ortho", axis=1)[:, : cfg.n_mfcc]


def intensity_db(x, floor_db: float = -120.0) -> float:
    ms = float(np.mean(np.square(x))) if len(x) else 0.0
    return max(10.0 * np.log10(ms), floor_db) if ms > 0 else floor_db


def analyze_window(x, sr: int = 16000, cfg: DspConfig = DspConfig()) -> BiomarkerWindow:
    x = np.asarray(x, dtype=np.float64)
    energy = float(np.mean(x * x))
    zcr = kernels.zero_crossings(x) / (len(x) - 1)
    coeffs = mfcc_frames(x, sr, cfg)
    lag, peak = pitch_analysis(x, sr, cfg)
    f0 = None if lag is None else sr / lag
    jitter = shimmer = 0.0
    if f0 is not None:
        try:
            jitter, shimmer = compute_jitter_shimmer(x, f0, sr)
        except InsufficientCycles:
            pass
    return BiomarkerWindow(
        intensity_db=intensity_db(x, cfg.floor_db),
        mfcc=coeffs.mean(axis=0),
        delta_mfcc=_delta(coeffs).mean(axis=0),
        f0_hz=f0,
        zcr=zcr,
        hnr_db=hnr_from_r(peak if f0 is not None else 0.0),
        jitter=jitter,
        shimmer=shimmer,
        energy=energy,
    )


# ---------------------------------------------------------------------------
# utterance level
# ---------------------------------------------------------------------------

def count_fillers(transcript: str, fillers=("um", "uh", "er", "hmm")) -> int:
    words = re.findall(r"[a-z']+", transcript.lower())
    targets = set(fillers)
    return sum(w in targets for w in words)


def pause_spans(buf: AudioBuffer, cfg: DspConfig = DspConfig()):
    """(start_s, stop_s) of each silent run lasting at least ``pause_min_s``."""
    hop = int(round(cfg.pause_frame_s * buf.sample_rate))
    n = len(buf) // hop
    if n == 0:
        return []
    ms = np.mean(buf.samples[: n * hop].reshape(n, hop) ** 2, axis=1)
    db = np.maximum(10.0 * np.log10(np.maximum(ms, 1e-300)), cfg.floor_db)
    floor = np.percentile(db, cfg.pause_floor_percentile)
    if db.max() - floor >= cfg.pause_min_range_db:
        silent = db < floor + cfg.pause_margin_db
    else:
        # flat level: the whole utterance is either speech or silence
        silent = np.full(n, db.max() < cfg.silence_abs_db)
    min_frames = int(round(cfg.pause_min_s / cfg.pause_frame_s))
    edges = np.diff(np.concatenate(([0], silent.astype(np.int8), [0])))
    spans = []
    for a, b in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)):
        if b - a >= min_frames:
            spans.append((a * cfg.pause_frame_s, b * cfg.pause_frame_s))
    return spans


def utterance_stats(buf: AudioBuffer, windows, transcript: str, cfg: DspConfig = DspConfig()) -> UtteranceStats:
    spans = pause_spans(buf, cfg)
    total = float(sum(b - a for a, b in spans))
    voiced = [w.voiced for w in windows]
    return UtteranceStats(
        pause_count=len(spans),
        total_pause_s=round(min(total, buf.duration), 6),
        phonation_rate=float(np.mean(voiced)) if voiced else 0.0,
        filler_count=count_fillers(transcript, cfg.fillers),
    )


def extract_series(buf: AudioBuffer, transcript: str = "", cfg: DspConfig = DspConfig()) -> BiomarkerSeries:
    n = int(round(cfg.window_s * buf.sample_rate))
    if len(buf) < n:
        raise TooShort(f"need at least {cfg.window_s} s of audio, got {buf.duration:.3f} s")
    windows = tuple(analyze_window(buf.samples[i * n: (i + 1) * n], buf.sample_rate, cfg) for i in range(len(buf) // n))
    return BiomarkerSeries(windows, utterance_stats(buf, windows, transcript, cfg), cfg.window_s)


# ---------------------------------------------------------------------------
# feature cache: CSV rows + JSON sidecar
# ---------------------------------------------------------------------------

def series_to_csv(series: BiomarkerSeries) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(FIELD_NAMES)
    for w in series.windows:
        row = [repr(float(v)) for v in w.as_vector()]
        if not w.voiced:
            row[FIELD_NAMES.index("f0_hz")] = ""
        writer.writerow(row)
    return out.getvalue()


def stats_to_json(stats: UtteranceStats) -> str:
    return json.dumps(
        {
            "pause_count": stats.pause_count,
            "total_pause_s": stats.total_pause_s,
            "phonation_rate": stats.phonation_rate,
            "filler_count": stats.filler_count,
        },
        sort_keys=True,
        indent=1,
    ) + "\n"


def series_from_files(csv_text: str, json_text: str) -> BiomarkerSeries:
    reader = csv.reader(io.StringIO(csv_text))
    header = next(reader)
    if tuple(header) != tuple(FIELD_NAMES):
        raise ValueError("unexpected biomarker CSV header")
    f0_at = FIELD_NAMES.index("f0_hz")
    windows = []
    for row in reader:
        vals = [float(v) if v else 0.0 for v in row]
        windows.append(
            BiomarkerWindow(
                intensity_db=vals[0],
                mfcc=np.array(vals[1:14]),
                delta_mfcc=np.array(vals[14:27]),
                f0_hz=float(row[f0_at]) if row[f0_at] else None,
                zcr=vals[28],
                hnr_db=vals[29],
                jitter=vals[30],
                shimmer=vals[31],
                energy=vals[32],
            )
        )
    s = json.loads(json_text)
    stats = UtteranceStats(int(s["pause_count"]), float(s["total_pause_s"]), float(s["phonation_rate"]), int(s["filler_count"]))
    return BiomarkerSeries(tuple(windows), stats)


def save_series(stem, series: BiomarkerSeries) -> None:
    stem = Path(stem)
    stem.with_suffix(".csv").write_bytes(series_to_csv(series).encode("utf-8"))
    stem.with_suffix(".json").write_bytes(stats_to_json(series.stats).encode("utf-8"))


def load_series(stem) -> BiomarkerSeries:
    stem = Path(stem)
    return series_from_files(stem.with_suffix(".csv").read_text("utf-8"), stem.with_suffix(".json").read_text("utf-8"))
