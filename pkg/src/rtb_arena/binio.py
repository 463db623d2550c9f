"""Versioned binary bundles: a JSON metadata header plus named numpy arrays.

One flat container backs every persisted artifact (episode caches, CTR
models, agent checkpoints, value tables). Writing is byte-deterministic:
metadata keys are sorted and arrays are stored in name order.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DataError

MAGIC = b"RTBA"
FORMAT_VERSION = 1


def save_bundle(path: str | Path, meta: dict[str, Any], arrays: dict[str, np.ndarray]) -> None:
    """Write metadata and arrays to `path`, replacing any existing file."""
    head = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(head)))
    buf.write(head)
    buf.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        blob = io.BytesIO()
        np.save(blob, np.ascontiguousarray(arrays[name]), allow_pickle=False)
        raw = blob.getvalue()
        enc = name.encode("utf-8")
        buf.write(struct.pack("<IQ", len(enc), len(raw)))
        buf.write(enc)
        buf.write(raw)
    Path(path).write_bytes(buf.getvalue())


def load_bundle(path: str | Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    """Read a bundle written by `save_bundle`."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise DataError(f"{path}: not a bundle file (bad magic)")
    version, head_len = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported bundle version {version}")
    off = 12
    meta = json.loads(data[off : off + head_len].decode("utf-8"))
    off += head_len
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len, raw_len = struct.unpack_from("<IQ", data, off)
        off += 12
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        arrays[name] = np.load(io.BytesIO(data[off : off + raw_len]), allow_pickle=False)
        off += raw_len
    return meta, arrays
