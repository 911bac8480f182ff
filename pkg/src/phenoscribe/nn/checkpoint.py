"""Checkpoint format: b"PHSC0001", one compact JSON header line, raw little-endian float32."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import CheckpointError

MAGIC = b"PHSC0001"


def encode_checkpoint(named_params, config=None, extra=None) -> bytes:
    entries, blobs = [], []
    for name, p in named_params:
        arr = np.asarray(p.data if hasattr(p, "data") else p, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "frozen": bool(getattr(p, "frozen", False))})
        blobs.append(arr.tobytes())
    header = {"params": entries, "config": config or {}}
    if extra:
        header["extra"] = extra
    text = json.dumps(header, sort_keys=True, separators=(",", ":"))
    return MAGIC + text.encode("utf-8") + b"\n" + b"".join(blobs)


def decode_checkpoint(blob: bytes):
    """Return (header, {name: float32 array})."""
    if blob[:8] != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    end = blob.find(b"\n", 8)
    if end < 0:
        raise CheckpointError("checkpoint header not terminated")
    header = json.loads(blob[8:end].decode("utf-8"))
    arrays, offset = {}, end + 1
    for entry in header["params"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = 4 * count
        if offset + nbytes > len(blob):
            raise CheckpointError(f"checkpoint truncated in {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(entry["shape"])
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return header, arrays


def save_checkpoint(path, named_params, config=None, extra=None) -> None:
    Path(path).write_bytes(encode_checkpoint(named_params, config, extra))


def load_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"no checkpoint at {path}")
    return decode_checkpoint(path.read_bytes())


def restore(named_params, arrays, strict=True) -> None:
    """Copy arrays into matching Parameters (cast to the current float type)."""
    for name, p in named_params:
        if name not in arrays:
            if strict:
                raise CheckpointError(f"checkpoint lacks parameter {name}")
            continue
        p.assign(np.asarray(arrays[name], dtype=p.data.dtype))
