"""Binary parameter container.

Layout (all integers little-endian)::

    8 bytes   magic  b"LPHYSPRM"
    4 bytes   uint32 format version (currently 1)
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header, keys sorted:
              {"entries": [{"name", "shape", "offset", "count"}, ...],
               "meta": {...}}
    ...       float64 little-endian payload; entry i occupies
              [offset, offset + count) in units of 8 bytes

Entries are written in sorted name order so identical inputs give identical
bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LPHYSPRM"
FORMAT_VERSION = 1


def dumps(arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        blobs.append(arr.tobytes(order="C"))
        offset += arr.size
    header = json.dumps({"entries": entries, "meta": meta or {}}, sort_keys=True).encode()
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(header)) + header + b"".join(blobs)


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if data[:8] != MAGIC:
        raise ValueError("not a parameter container (bad magic)")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported container version {version}")
    header = json.loads(data[20 : 20 + hlen].decode())
    payload = np.frombuffer(data, dtype="<f8", offset=20 + hlen)
    arrays = {}
    for e in header["entries"]:
        flat = payload[e["offset"] : e["offset"] + e["count"]]
        arrays[e["name"]] = flat.astype(np.float64).reshape(e["shape"])
    return arrays, header["meta"]


def save(path, arrays, meta=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(arrays, meta))
    return path


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
