"""Compare the numba kernels against their pure-numpy fallbacks.

Run: python benchmarks/bench_kernels.py [--repeats 5] [--seconds 3]

Per-kernel timings call both variants in this process.  The end-to-end row
runs biomarker and landmark extraction in a subprocess per backend, since
``PHENOSCRIBE_NUMBA`` is read once at import time.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from phenoscribe import kernels

SR = 16000

E2E = """
import time, numpy as np
from phenoscribe.audio_io import AudioBuffer
from phenoscribe.biomarkers import extract_series
from phenoscribe.landmarks import extract_landmarks
t = np.arange(int({seconds} * 16000)) / 16000
x = 0.5 * np.sin(2 * np.pi * 180 * t) * (np.sin(2 * np.pi * 1.5 * t) > 0)
buf = AudioBuffer(x.astype(np.float32), 16000)
extract_series(buf); extract_landmarks(buf)
start = time.perf_counter()
for _ in range({repeats}):
    extract_series(buf); extract_landmarks(buf)
print((time.perf_counter() - start) / {repeats})
"""


def best_of(fn, repeats):
    fn()  # warm-up, includes jit compilation on the first call
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def kernel_cases(seconds):
    rng = np.random.default_rng(0)
    t = np.arange(int(seconds * SR)) / SR
    speech = np.sin(2 * np.pi * 180 * t) + 0.05 * rng.standard_normal(t.size)
    frame = speech[:640]
    return {
        "autocorr": (kernels.autocorr_jit, kernels.autocorr_numpy, (frame, 32, 320)),
        "frame_periodicity": (kernels.frame_periodicity_jit, kernels.frame_periodicity_numpy,
                              (speech, 400, 160, 32, 320)),
        "track_cycle_peaks": (kernels.track_cycle_peaks_jit, kernels.track_cycle_peaks_numpy,
                              (speech, SR / 180)),
        "zero_crossings": (kernels.zero_crossings_jit, kernels.zero_crossings_numpy, (speech,)),
    }


def end_to_end(backend, seconds, repeats):
    env = dict(os.environ, PHENOSCRIBE_NUMBA="1" if backend == "numba" else "0")
    code = E2E.format(seconds=seconds, repeats=repeats)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seconds", type=float, default=3.0, help="signal length in seconds")
    args = ap.parse_args(argv)

    print(f"{'kernel':<20} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}  agree")
    for name, (jit, ref, call_args) in kernel_cases(args.seconds).items():
        a, b = jit(*call_args), ref(*call_args)
        agree = all(np.allclose(u, v, atol=1e-9) for u, v in zip(np.atleast_1d(a), np.atleast_1d(b))) \
            if isinstance(a, tuple) else np.allclose(a, b, atol=1e-9)
        t_jit, t_np = best_of(lambda: jit(*call_args), args.repeats), best_of(lambda: ref(*call_args), args.repeats)
        print(f"{name:<20} {t_jit * 1e3:>10.3f} {t_np * 1e3:>10.3f} {t_np / t_jit:>7.1f}x  {agree}")
    t_jit, t_np = (end_to_end(b, args.seconds, args.repeats) for b in ("numba", "numpy"))
    print(f"{'extract (e2e)':<20} {t_jit * 1e3:>10.1f} {t_np * 1e3:>10.1f} {t_np / t_jit:>7.1f}x")


if __name__ == "__main__":
    main()
