"""Six-band acoustic landmark detection.

Pipeline: STFT -> mean power per band in dB -> coarse and fine smoothed
copies -> rate-of-rise peaks confirmed across the two passes -> events
grouped across bands and named by which bands moved.  Periodicity (p+/p-)
comes from a per-frame autocorrelation track computed alongside.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter1d, median_filter, uniform_filter1d
from scipy.signal import get_window

from . import kernels
from .audio_io import AudioBuffer
from .config import DspConfig
from .errors import TooShort

SYMBOLS = ("g+", "g-", "b+", "b-", "s+", "s-", "f+", "f-", "v+", "v-", "p+", "p-")


@dataclass(frozen=True, eq=False)
class BandEnergyTrack:
    coarse: np.ndarray  # (6, n_frames) dB
    fine: np.ndarray  # (6, n_frames) dB
    periodicity: np.ndarray  # (n_frames,) max normalized autocorrelation
    frame_hop_s: float
    frame_times: np.ndarray  # frame centres, seconds
    band_edges: tuple

    @property
    def bands(self) -> np.ndarray:
        return self.coarse

    def __len__(self):
        return self.coarse.shape[1]


@dataclass(frozen=True)
class Landmark:
    symbol: str
    time_s: float

    def __post_init__(self):
        if self.symbol not in SYMBOLS:
            raise ValueError(f"unknown landmark symbol {self.symbol!r}")


@dataclass(frozen=True)
class LandmarkSequence:
    landmarks: tuple = ()

    def __post_init__(self):
        times = [lm.time_s for lm in self.landmarks]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("landmark times must be nondecreasing")

    def __len__(self):
        return len(self.landmarks)

    def __iter__(self):
        return iter(self.landmarks)

    @property
    def symbols(self) -> list:
        return [lm.symbol for lm in self.landmarks]


def _frames_for(seconds: float, hop_s: float) -> int:
    return max(int(round(seconds / hop_s)), 1)


def band_power_db(buf: AudioBuffer, cfg: DspConfig = DspConfig()):
    """Unsmoothed (6, n_frames) band levels in dB plus frame centre times."""
    win = int(round(cfg.stft_win_s * buf.sample_rate))
    hop = int(round(cfg.stft_hop_s * buf.sample_rate))
    x = buf.samples
    if len(x) < win:
        raise TooShort(f"need at least {win} samples, got {len(x)}")
    n_frames = (len(x) - win) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]
    window = get_window("hann", win)
    spec = np.fft.rfft(frames * window, cfg.n_fft, axis=1)
    power = (np.abs(spec) ** 2) / np.sum(window) ** 2
    freqs = np.fft.rfftfreq(cfg.n_fft, 1.0 / buf.sample_rate)
    nyq = buf.sample_rate / 2
    levels = np.empty((len(cfg.band_edges), n_frames))
    floor = 10.0 ** (cfg.floor_db / 10.0)
    for i, (lo, hi) in enumerate(cfg.band_edges):
        sel = (freqs >= lo) & ((freqs < hi) | ((hi >= nyq) & (freqs <= hi)))
        levels[i] = 10.0 * np.log10(np.maximum(power[:, sel].mean(axis=1), floor))
    times = (np.arange(n_frames) * hop + win / 2) / buf.sample_rate
    return levels, times


def band_energies(buf: AudioBuffer, cfg: DspConfig = DspConfig()) -> BandEnergyTrack:
    levels, times = band_power_db(buf, cfg)
    coarse = uniform_filter1d(levels, _frames_for(cfg.coarse_smooth_s, cfg.stft_hop_s), axis=1, mode="nearest")
    fine = uniform_filter1d(levels, _frames_for(cfg.fine_smooth_s, cfg.stft_hop_s), axis=1, mode="nearest")

    # periodicity frames share the STFT frame centres
    sr = buf.sample_rate
    hop = int(round(cfg.stft_hop_s * sr))
    pwin = int(round(cfg.periodicity_win_s * sr))
    first_centre = int(round(cfg.stft_win_s * sr)) // 2
    lead = max(pwin // 2 - first_centre, 0)
    padded = np.concatenate([np.zeros(lead), buf.samples, np.zeros(pwin)])
    start = first_centre + lead - pwin // 2
    per = kernels.frame_periodicity(
        padded[start:], pwin, hop, int(sr // cfg.f0_max_hz), int(np.ceil(sr / cfg.f0_min_hz))
    )[: len(times)]
    return BandEnergyTrack(coarse, fine, per, cfg.stft_hop_s, times, tuple(map(tuple, cfg.band_edges)))


def _centered_diff(track: np.ndarray, k: int) -> np.ndarray:
    padded = np.pad(track, [(0, 0)] * (track.ndim - 1) + [(k, k)], mode="edge")
    return padded[..., 2 * k:] - padded[..., : -2 * k]


def _runs(mask: np.ndarray):
    """(start, stop) index pairs of True runs."""
    edges = np.diff(np.concatenate(([0], mask.astype(np.int8), [0])))
    return list(zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)))


def _band_events(dc, df, cfg: DspConfig, hop_s: float):
    """Confirmed (frame, sign) events for one band."""
    reach = _frames_for(cfg.confirm_window_s, hop_s)
    events = []
    for sign in (1, -1):
        c, f = sign * dc, sign * df
        for start, stop in _runs(c > cfg.coarse_threshold_db):
            peak = start + int(np.argmax(c[start:stop]))
            lo, hi = max(peak - reach, 0), min(peak + reach + 1, len(f))
            j = lo + int(np.argmax(f[lo:hi]))
            if f[j] >= cfg.fine_threshold_db:
                events.append((j, sign))
    return events


def _name(bands: set, band1_high: bool) -> str | None:
    upper = bands & {1, 2, 3, 4, 5}
    if 0 in bands and band1_high:
        return "g"
    if len(upper) >= 3 and not band1_high:
        return "b"
    if bands & {1, 2} and band1_high:
        return "s"
    if bands & {3, 4, 5}:
        return "v" if band1_high else "f"
    return None


def detect_landmarks(track: BandEnergyTrack, cfg: DspConfig = DspConfig()) -> LandmarkSequence:
    """Turn a band-energy track into a time-ordered landmark sequence."""
    n = len(track)
    if n == 0:
        return LandmarkSequence(())
    hop_s = track.frame_hop_s
    kc = int(np.ceil(cfg.coarse_smooth_s / hop_s / 2))
    kf = int(np.ceil(cfg.fine_smooth_s / hop_s / 2))
    dc = _centered_diff(track.coarse, kc)
    df = _centered_diff(track.fine, kf)

    loudest = maximum_filter1d(track.coarse.max(axis=0), 4 * kc + 1, mode="nearest")
    events = []  # (frame, sign, band)
    for b in range(track.coarse.shape[0]):
        for j, s in _band_events(dc[b], df[b], cfg, hop_s):
            probe = min(max(j + s * kc, 0), n - 1)
            # leakage far below the dominant band is not an articulatory event
            if track.coarse[b, probe] >= loudest[probe] - cfg.audible_range_db:
                events.append((j, s, b))
    events.sort()

    span = _frames_for(cfg.cluster_window_s, hop_s)
    out = []  # (frame, order, symbol)
    for sign in (1, -1):
        group = [e for e in events if e[1] == sign]
        i = 0
        while i < len(group):
            j = i
            while j + 1 < len(group) and group[j + 1][0] - group[i][0] <= span:
                j += 1
            cluster = group[i: j + 1]
            bands = {e[2] for e in cluster}
            b1 = [e[0] for e in cluster if e[2] == 0]
            frame_at = b1[0] if b1 else cluster[0][0]
            probe = min(max(frame_at + sign * kc, 0), n - 1)
            high = track.coarse[0, probe] - track.coarse[1:, probe].max() >= cfg.voicing_margin_db
            name = _name(bands, bool(high))
            if name is not None:
                out.append((frame_at, name + ("+" if sign > 0 else "-")))
            i = j + 1

    periodic = median_filter((track.periodicity > cfg.voicing_threshold).astype(np.int8), size=3, mode="nearest")
    flips = np.flatnonzero(np.diff(periodic))
    for j in flips:
        out.append((int(j) + 1, "p+" if periodic[j + 1] else "p-"))

    out.sort(key=lambda item: (item[0], SYMBOLS.index(item[1])))
    return LandmarkSequence(tuple(Landmark(sym, float(track.frame_times[f])) for f, sym in out))


def extract_landmarks(buf: AudioBuffer, cfg: DspConfig = DspConfig()) -> LandmarkSequence:
    return detect_landmarks(band_energies(buf, cfg), cfg)


def landmarks_to_tokens(seq: LandmarkSequence) -> str:
    return " ".join(seq.symbols)


def dump_landmarks(seq: LandmarkSequence) -> str:
    return "".join(f"{lm.time_s:.3f}\t{lm.symbol}\n" for lm in seq)


def parse_landmarks(text: str) -> LandmarkSequence:
    items = []
    for line in text.splitlines():
        if not line.strip():
            continue
        t, sym = line.split("\t")
        items.append(Landmark(sym, float(t)))
    return LandmarkSequence(tuple(items))


def save_landmarks(path, seq: LandmarkSequence) -> None:
    Path(path).write_bytes(dump_landmarks(seq).encode("utf-8"))


def load_landmarks(path) -> LandmarkSequence:
    return parse_landmarks(Path(path).read_bytes().decode("utf-8"))
