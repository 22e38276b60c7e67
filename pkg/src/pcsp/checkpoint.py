"""Versioned binary checkpoint container.

Layout (all integers little-endian uint32):

    magic "PCSP" | version | json_len | json bytes (config + counters)
    | array_count | per array: name_len, name bytes (utf-8), rank,
    rank extents, then rank-product little-endian float32 values.

The JSON blob carries the network config snapshot plus whatever counters
and seeds the writer wants to persist; arrays hold parameters and optimizer
moments.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ParseError

MAGIC = b"PCSP"
VERSION = 1


def save_container(path, meta, arrays):
    """Write the container; ``arrays`` maps name -> ndarray (stored f32)."""
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            arr = np.asarray(arr, dtype="<f4")
            fh.write(struct.pack("<I", arr.ndim))
            for ext in arr.shape:
                fh.write(struct.pack("<I", ext))
            fh.write(arr.tobytes())


def _read(fh, n, path):
    buf = fh.read(n)
    if len(buf) != n:
        raise ParseError(
            f"{path}: truncated checkpoint at byte {fh.tell() - len(buf)}")
    return buf


def load_container(path):
    """Read a container back into (meta dict, arrays dict)."""
    with open(path, "rb") as fh:
        if _read(fh, 4, path) != MAGIC:
            raise ParseError(f"{path}: bad magic, not a checkpoint file")
        version = struct.unpack("<I", _read(fh, 4, path))[0]
        if version != VERSION:
            raise ParseError(f"{path}: unsupported format version {version}")
        blob_len = struct.unpack("<I", _read(fh, 4, path))[0]
        meta = json.loads(_read(fh, blob_len, path).decode("utf-8"))
        count = struct.unpack("<I", _read(fh, 4, path))[0]
        arrays = {}
        for _ in range(count):
            name_len = struct.unpack("<I", _read(fh, 4, path))[0]
            name = _read(fh, name_len, path).decode("utf-8")
            rank = struct.unpack("<I", _read(fh, 4, path))[0]
            shape = tuple(struct.unpack("<I", _read(fh, 4, path))[0]
                          for _ in range(rank))
            n_vals = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read(fh, 4 * n_vals, path), dtype="<f4")
            arrays[name] = data.reshape(shape).copy()
    return meta, arrays
