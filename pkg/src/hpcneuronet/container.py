"""Self-describing binary container shared by model files and dataset caches.

Layout::

    b"HPCNCT01"                      8-byte magic
    uint32 little-endian             length of the JSON header in bytes
    JSON header (utf-8, sorted keys) {"meta": {...}, "blobs": [{name, shape, offset, nbytes}]}
    blob payloads                    little-endian float32, row-major, concatenated
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import UsageError

MAGIC = b"HPCNCT01"
_F32 = np.dtype("<f4")


def dumps(meta: Mapping, arrays: Mapping[str, np.ndarray]) -> bytes:
    blobs, payload, offset = [], [], 0
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype=_F32).tobytes()
        blobs.append({"name": name, "shape": list(np.shape(arr)), "offset": offset,
                      "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "blobs": blobs}, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(header)) + header + b"".join(payload)


def loads(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if buf[:8] != MAGIC:
        raise UsageError("not an HPCN container (bad magic)")
    (hlen,) = struct.unpack("<I", buf[8:12])
    header = json.loads(buf[12:12 + hlen].decode("utf-8"))
    base = 12 + hlen
    arrays = {}
    for b in header["blobs"]:
        start = base + b["offset"]
        arr = np.frombuffer(buf, dtype=_F32, count=b["nbytes"] // 4, offset=start)
        arrays[b["name"]] = arr.reshape(b["shape"]).copy()
    return header["meta"], arrays


def write(path, meta: Mapping, arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(meta, arrays))


def read(path) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
