"""Hot DSP inner loops.

Every kernel exists twice: a numba ``@njit`` loop and a pure-numpy
fallback.  The public names dispatch to one of them at import time:
numba is used unless ``PHENOSCRIBE_NUMBA=0`` is set or numba cannot be
imported.  Both variants stay importable (``*_jit`` / ``*_numpy``) so the
test suite and ``benchmarks/bench_kernels.py`` can compare them.
"""
import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


USE_NUMBA = _HAVE_NUMBA and os.environ.get("PHENOSCRIBE_NUMBA", "1") != "0"

BACKEND = "numba" if USE_NUMBA else "numpy"

# above this many samples the O(n log n) FFT autocorrelation beats the
# direct O(n * lags) loop even when jitted (crossover measured near 700)
DIRECT_MAX = 768


# ---------------------------------------------------------------------------
# normalized autocorrelation over a lag range
# ---------------------------------------------------------------------------

# fastmath lets the lag products reduce in SIMD lanes; results differ from the
# numpy twin only by summation order
@njit(cache=True, nogil=True, fastmath=True)
def autocorr_jit(x, min_lag, max_lag):
    n = x.shape[0]
    out = np.zeros(max_lag - min_lag + 1)
    # prefix energies: head(t) = sum x[:n-t]^2, tail(t) = sum x[t:]^2
    csum = np.zeros(n + 1)
    for i in range(n):
        csum[i + 1] = csum[i] + x[i] * x[i]
    total = csum[n]
    for lag in range(min_lag, max_lag + 1):
        if lag >= n:
            break
        acc = 0.0
        for i in range(n - lag):
            acc += x[i] * x[i + lag]
        denom = np.sqrt(csum[n - lag] * (total - csum[lag]))
        if denom > 0.0:
            out[lag - min_lag] = acc / denom
    return out


def autocorr_numpy(x, min_lag, max_lag):
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    out = np.zeros(max_lag - min_lag + 1)
    if n == 0:
        return out
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(x, nfft)
    acf = np.fft.irfft(spec * np.conj(spec), nfft)[:n]
    csum = np.concatenate(([0.0], np.cumsum(x * x)))
    total = csum[-1]
    lags = np.arange(min_lag, min(max_lag, n - 1) + 1)
    if lags.size == 0:
        return out
    denom = np.sqrt(csum[n - lags] * (total - csum[lags]))
    vals = np.zeros(lags.size)
    ok = denom > 0
    vals[ok] = acf[lags[ok]] / denom[ok]
    out[: lags.size] = vals
    return out


# ---------------------------------------------------------------------------
# per-frame periodicity (max normalized autocorrelation)
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def frame_periodicity_jit(x, win, hop, min_lag, max_lag):
    n_frames = (x.shape[0] - win) // hop + 1
    if n_frames < 0:
        n_frames = 0
    out = np.zeros(n_frames)
    for f in range(n_frames):
        r = autocorr_jit(x[f * hop: f * hop + win], min_lag, max_lag)
        best = 0.0
        for v in r:
            if v > best:
                best = v
        out[f] = best
    return out


def frame_periodicity_numpy(x, win, hop, min_lag, max_lag):
    x = np.asarray(x, dtype=np.float64)
    n_frames = max((x.shape[0] - win) // hop + 1, 0)
    out = np.zeros(n_frames)
    for f in range(n_frames):
        r = autocorr_numpy(x[f * hop: f * hop + win], min_lag, max_lag)
        out[f] = max(float(r.max()), 0.0) if r.size else 0.0
    return out


# ---------------------------------------------------------------------------
# cycle-peak tracking for jitter / shimmer
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def track_cycle_peaks_jit(x, period):
    n = x.shape[0]
    pos = np.empty(n)
    amp = np.empty(n)
    count = 0
    first_hi = int(np.ceil(period))
    if first_hi > n:
        first_hi = n
    if first_hi < 1:
        return pos[:0], amp[:0]
    idx = 0
    for i in range(first_hi):
        if x[i] > x[idx]:
            idx = i
    while True:
        p = float(idx)
        a = x[idx]
        if 0 < idx < n - 1:
            left = x[idx - 1]
            right = x[idx + 1]
            denom = left - 2.0 * a + right
            if denom < 0.0:
                delta = 0.5 * (left - right) / denom
                p = idx + delta
                a = a - 0.25 * (left - right) * delta
        pos[count] = p
        amp[count] = a
        count += 1
        lo = int(idx + 0.75 * period)
        hi = int(idx + 1.25 * period) + 1
        if hi > n or lo <= idx:
            break
        best = lo
        for i in range(lo, hi):
            if x[i] > x[best]:
                best = i
        idx = best
    return pos[:count], amp[:count]


def track_cycle_peaks_numpy(x, period):
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    first_hi = min(int(np.ceil(period)), n)
    if first_hi < 1:
        return np.empty(0), np.empty(0)
    idx = int(np.argmax(x[:first_hi]))
    pos, amp = [], []
    while True:
        p, a = float(idx), x[idx]
        if 0 < idx < n - 1:
            left, right = x[idx - 1], x[idx + 1]
            denom = left - 2.0 * a + right
            if denom < 0.0:
                delta = 0.5 * (left - right) / denom
                p = idx + delta
                a = a - 0.25 * (left - right) * delta
        pos.append(p)
        amp.append(a)
        lo = int(idx + 0.75 * period)
        hi = int(idx + 1.25 * period) + 1
        if hi > n or lo <= idx:
            break
        idx = lo + int(np.argmax(x[lo:hi]))
    return np.array(pos), np.array(amp)


# ---------------------------------------------------------------------------
# zero crossings
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def zero_crossings_jit(x):
    count = 0
    for i in range(1, x.shape[0]):
        if (x[i] >= 0.0) != (x[i - 1] >= 0.0):
            count += 1
    return count


def zero_crossings_numpy(x):
    x = np.asarray(x)
    if x.shape[0] < 2:
        return 0
    return int(np.count_nonzero(np.diff(x >= 0.0)))


if USE_NUMBA:
    _autocorr = autocorr_jit
    _frame_periodicity = frame_periodicity_jit
    _track_cycle_peaks = track_cycle_peaks_jit
    _zero_crossings = zero_crossings_jit
else:
    _autocorr = autocorr_numpy
    _frame_periodicity = frame_periodicity_numpy
    _track_cycle_peaks = track_cycle_peaks_numpy
    _zero_crossings = zero_crossings_numpy


def autocorr(x, min_lag, max_lag):
    """Normalized autocorrelation ``r[lag - min_lag]`` for lags in [min_lag, max_lag].

    Each lag is normalized by the energies of the two overlapping segments,
    so a perfectly periodic signal scores 1 at its period regardless of
    amplitude.  Lags at or beyond ``len(x)`` and zero-energy segments give 0.
    Inputs longer than ``DIRECT_MAX`` always take the FFT path.
    """
    if len(x) > DIRECT_MAX:
        return autocorr_numpy(x, int(min_lag), int(max_lag))
    return _autocorr(np.ascontiguousarray(x, dtype=np.float64), int(min_lag), int(max_lag))


def frame_periodicity(x, win, hop, min_lag, max_lag):
    """Max normalized autocorrelation of each ``win``-sample frame."""
    return _frame_periodicity(
        np.ascontiguousarray(x, dtype=np.float64), int(win), int(hop), int(min_lag), int(max_lag)
    )


def track_cycle_peaks(x, period):
    """Follow one amplitude peak per pitch period.

    Returns (positions, amplitudes), both parabolically interpolated.  The
    search for each next peak spans 0.75..1.25 periods after the previous one.
    """
    return _track_cycle_peaks(np.ascontiguousarray(x, dtype=np.float64), float(period))


def zero_crossings(x):
    return int(_zero_crossings(np.ascontiguousarray(x, dtype=np.float64)))
