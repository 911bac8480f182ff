import numpy as np
import pytest

from phenoscribe.audio_io import AudioBuffer
from phenoscribe.nn import precision

SR = 16000


def tone(freq, seconds, amp=0.5, sr=SR, phase=0.0):
    t = np.arange(int(round(seconds * sr))) / sr
    return amp * np.sin(2 * np.pi * freq * t + phase)


def buffer(samples, sr=SR):
    return AudioBuffer(np.clip(np.asarray(samples, dtype=float), -1, 1), sr)


@pytest.fixture
def f64():
    """Run the test body with 64-bit tensors."""
    with precision(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
