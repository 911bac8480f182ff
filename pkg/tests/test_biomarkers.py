import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phenoscribe.biomarkers import (
    FIELD_NAMES,
    compute_f0,
    compute_hnr,
    compute_jitter_shimmer,
    count_fillers,
    extract_series,
    hnr_from_r,
    load_series,
    mfcc_frames,
    save_series,
    series_from_files,
    series_to_csv,
    stats_to_json,
)
from phenoscribe.errors import InsufficientCycles, TooShort, Unvoiced

from conftest import SR, buffer, tone


def zero_crossing_period(x, sr=SR):
    """Oracle: mean interval between rising zero crossings, with linear interpolation."""
    idx = np.flatnonzero((x[:-1] < 0) & (x[1:] >= 0))
    frac = -x[idx] / (x[idx + 1] - x[idx])
    times = (idx + frac) / sr
    return np.mean(np.diff(times))


def perturbed_pulse_sine(f0, seconds, spread, seed):
    """Sine whose successive periods are f0 periods scaled by U(1-spread, 1+spread)."""
    rng = np.random.default_rng(seed)
    periods, total = [], 0.0
    while total < seconds:
        periods.append((1.0 / f0) * rng.uniform(1 - spread, 1 + spread))
        total += periods[-1]
    x = np.concatenate([np.sin(2 * np.pi * np.arange(int(round(p * SR))) / int(round(p * SR))) for p in periods])
    lengths = np.array([int(round(p * SR)) for p in periods], float)
    truth = np.mean(np.abs(np.diff(lengths))) / lengths.mean()
    return 0.5 * x[: int(seconds * SR)], truth


def test_sine_220():
    x = tone(220, 2.0)
    series = extract_series(buffer(x))
    assert len(series) == 4
    oracle_f0 = 1.0 / zero_crossing_period(x)
    assert abs(oracle_f0 - 220) < 0.01
    for w in series.windows:
        assert abs(w.f0_hz - oracle_f0) <= 2
        assert w.jitter < 0.005 and w.shimmer < 0.005
        assert abs(w.zcr - 2 * 220 / SR) <= 0.02 * 0.0275
        assert w.hnr_db >= 20


def test_silence_series():
    series = extract_series(buffer(np.zeros(SR)))
    assert len(series) == 2
    for w in series.windows:
        assert not w.voiced and w.f0_hz is None
        assert w.intensity_db <= -100 and w.zcr == 0
        assert np.all(np.isfinite(w.mfcc)) and np.all(np.isfinite(w.delta_mfcc))
    assert series.stats.pause_count == 1 and series.stats.phonation_rate == 0


def test_too_short():
    with pytest.raises(TooShort):
        extract_series(buffer(np.zeros(SR // 4)))


def test_f0_estimates():
    assert abs(compute_f0(tone(100, 0.5)) - 100) <= 1
    assert compute_f0(np.zeros(8000)) is None
    for seed in range(20):
        assert compute_f0(0.3 * np.random.default_rng(seed).standard_normal(8000)) is None


def test_jitter_shimmer_clean_and_perturbed():
    j, s = compute_jitter_shimmer(tone(200, 0.5), 200.0)
    assert j < 0.005 and s < 0.005
    x, truth = perturbed_pulse_sine(150, 0.5, 0.02, seed=7)
    j, _ = compute_jitter_shimmer(x, compute_f0(x))
    assert 0.005 <= j <= 0.04
    assert abs(j - truth) < 0.005


def test_insufficient_cycles():
    with pytest.raises(InsufficientCycles):
        compute_jitter_shimmer(tone(100, 0.02), 100.0)


def test_hnr():
    assert compute_hnr(tone(200, 0.5)) >= 20
    rng = np.random.default_rng(11)
    x = tone(200, 0.5, amp=np.sqrt(2) * 0.2) + 0.2 * rng.standard_normal(8000)
    assert abs(compute_hnr(x)) <= 2
    assert hnr_from_r(1.0) == pytest.approx(60.0, abs=1e-3)
    assert np.isfinite(hnr_from_r(0.0))
    with pytest.raises(Unvoiced):
        compute_hnr(np.zeros(8000))


def test_pause_between_tones():
    x = np.concatenate([tone(200, 1.0), np.zeros(SR // 2), tone(200, 1.0)])
    stats = extract_series(buffer(x), "um I think uh yes").stats
    assert stats.pause_count == 1
    assert abs(stats.total_pause_s - 0.5) <= 0.05
    assert stats.filler_count == 2


def test_all_voiced():
    stats = extract_series(buffer(tone(180, 2.0))).stats
    assert stats.phonation_rate == 1.0 and stats.pause_count == 0


def test_fillers():
    assert count_fillers("um I think uh yes") == 2
    assert count_fillers("Hmm. UM, er... summer") == 3


def test_amplitude_scaling():
    x = tone(170, 1.5, amp=0.8) + 0.01 * np.random.default_rng(2).standard_normal(int(1.5 * SR))
    a = extract_series(buffer(x))
    for c in (0.5, 0.1):
        b = extract_series(buffer(c * x))
        for wa, wb in zip(a.windows, b.windows):
            assert wb.intensity_db - wa.intensity_db == pytest.approx(20 * np.log10(c), abs=1e-6)
            assert wb.zcr == wa.zcr
            assert wb.f0_hz == pytest.approx(wa.f0_hz, rel=1e-9)
            assert wb.jitter == pytest.approx(wa.jitter, rel=1e-6, abs=1e-12)


def test_mfcc_shapes_and_finite():
    m = mfcc_frames(np.zeros(8000))
    assert m.shape[1] == 13 and np.all(np.isfinite(m))


@settings(max_examples=10, deadline=None)
@given(st.floats(0.5, 3.0), st.integers(0, 1000))
def test_window_count(duration, seed):
    n = int(duration * SR)
    x = 0.1 * np.random.default_rng(seed).standard_normal(n)
    assert len(extract_series(buffer(x))) == int(n // (SR // 2))


def test_cache_round_trip(tmp_path):
    x = np.concatenate([tone(210, 1.0), np.zeros(SR // 2), 0.1 * np.random.default_rng(0).standard_normal(SR)])
    series = extract_series(buffer(x), "uh well")
    text = series_to_csv(series)
    header = text.splitlines()[0].split(",")
    assert header == list(FIELD_NAMES) and len(header) == 33
    sidecar = json.loads(stats_to_json(series.stats))
    assert set(sidecar) == {"pause_count", "total_pause_s", "phonation_rate", "filler_count"}
    back = series_from_files(text, stats_to_json(series.stats))
    np.testing.assert_array_equal(back.matrix(), series.matrix())
    assert [w.voiced for w in back.windows] == [w.voiced for w in series.windows]
    save_series(tmp_path / "v", series)
    np.testing.assert_array_equal(load_series(tmp_path / "v").matrix(), series.matrix())
