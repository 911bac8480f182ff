"""PCM16 mono WAV I/O, linear resampling and fixed-length framing."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, BadWindow, MissingFile, TruncatedData, UnsupportedFormat, ZeroRate

CANONICAL_SR = 16000


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioBuffer holds mono samples only")
        if int(self.sample_rate) <= 0:
            raise ZeroRate(f"sample rate must be positive, got {self.sample_rate}")
        if samples.size and (np.abs(samples).max() > 1.0 or not np.all(np.isfinite(samples))):
            raise ValueError("samples must lie in [-1, 1]")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True, eq=False)
class FrameSeries:
    frames: np.ndarray  # (n_frames, win_len), read-only view
    win_len: int
    hop: int
    origin_sr: int

    def __len__(self):
        return self.frames.shape[0]

    def starts(self) -> np.ndarray:
        return np.arange(len(self)) * self.hop


def _read_exact(blob: bytes, offset: int, size: int, what: str) -> bytes:
    if offset + size > len(blob):
        raise TruncatedData(f"{what}: need {size} bytes at offset {offset}, file has {len(blob)}")
    return blob[offset: offset + size]


def parse_wav(blob: bytes) -> AudioBuffer:
    """Decode an in-memory RIFF/WAVE PCM16 mono file."""
    if len(blob) < 4 or blob[:4] != b"RIFF":
        raise BadMagic("missing RIFF magic")
    head = _read_exact(blob, 0, 12, "RIFF header")
    if head[8:12] != b"WAVE":
        raise BadMagic("RIFF container is not WAVE")

    offset = 12
    fmt = None
    while True:
        chunk_id = _read_exact(blob, offset, 4, "chunk id")
        (size,) = struct.unpack("<I", _read_exact(blob, offset + 4, 4, "chunk size"))
        body_at = offset + 8
        if chunk_id == b"fmt ":
            body = _read_exact(blob, body_at, size, "fmt chunk")
            if size < 16:
                raise UnsupportedFormat("fmt chunk shorter than 16 bytes")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif chunk_id == b"data":
            if fmt is None:
                raise UnsupportedFormat("data chunk before fmt chunk")
            audio_format, channels, rate, _, _, bits = fmt
            if audio_format != 1:
                raise UnsupportedFormat(f"only PCM (format 1) is supported, got {audio_format}")
            if channels != 1:
                raise UnsupportedFormat(f"only mono is supported, got {channels} channels")
            if bits != 16:
                raise UnsupportedFormat(f"only 16-bit samples are supported, got {bits}")
            if rate == 0:
                raise UnsupportedFormat("sample rate 0 in header")
            data = _read_exact(blob, body_at, size, "data chunk")
            if size % 2:
                raise TruncatedData("odd byte count in 16-bit data chunk")
            ints = np.frombuffer(data, dtype="<i2")
            return AudioBuffer(ints.astype(np.float64) / 32768.0, rate)
        offset = body_at + size + (size & 1)


def load_wav(path) -> AudioBuffer:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    return parse_wav(path.read_bytes())


def encode_wav(buf: AudioBuffer) -> bytes:
    ints = np.clip(np.round(buf.samples * 32768.0), -32768, 32767).astype("<i2")
    data = ints.tobytes()
    fmt = struct.pack("<HHIIHH", 1, 1, buf.sample_rate, buf.sample_rate * 2, 2, 16)
    return b"".join(
        [
            b"RIFF",
            struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(data)),
            b"WAVE",
            b"fmt ",
            struct.pack("<I", len(fmt)),
            fmt,
            b"data",
            struct.pack("<I", len(data)),
            data,
        ]
    )


def save_wav(path, buf: AudioBuffer) -> None:
    Path(path).write_bytes(encode_wav(buf))


def resample(buf: AudioBuffer, target_sr: int) -> AudioBuffer:
    """Linear-interpolation resampler (no anti-alias filter)."""
    if target_sr <= 0:
        raise ZeroRate(f"target rate must be positive, got {target_sr}")
    if target_sr == buf.sample_rate:
        return buf
    n_in = len(buf)
    n_out = int(np.floor(n_in * target_sr / buf.sample_rate + 0.5))
    if n_in == 0 or n_out == 0:
        return AudioBuffer(np.zeros(n_out), target_sr)
    t = np.arange(n_out) * (buf.sample_rate / target_sr)
    out = np.interp(t, np.arange(n_in), buf.samples)
    return AudioBuffer(out, target_sr)


def frame(buf: AudioBuffer, win_len: int, hop: int) -> FrameSeries:
    if not (0 < hop <= win_len <= len(buf)):
        raise BadWindow(f"need 0 < hop <= win_len <= len; got hop={hop}, win={win_len}, len={len(buf)}")
    n_frames = (len(buf) - win_len) // hop + 1
    view = np.lib.stride_tricks.sliding_window_view(buf.samples, win_len)[::hop][:n_frames]
    return FrameSeries(view, win_len, hop, buf.sample_rate)


def to_canonical(buf: AudioBuffer) -> AudioBuffer:
    return resample(buf, CANONICAL_SR)
