"""Binary container shared by checkpoints, cell maps and track stores.

Layout (all integers little-endian)::

    bytes 0..7     magic, 8 ASCII bytes identifying the file kind
    bytes 8..15    uint64 H, length of the JSON header in bytes
    bytes 16..     UTF-8 JSON header (keys sorted, no whitespace)
    padding        zero bytes up to the next multiple of 8
    payload        raw arrays; every header entry ``{"offset", "nbytes"}``
                   is relative to the first payload byte

Arrays are stored C-ordered as ``<f8`` (float64) or ``<i4`` (int32).
"""
from __future__ import annotations

import json
import struct

import numpy as np

_DTYPES = {"f8": np.dtype("<f8"), "i4": np.dtype("<i4")}


class PayloadWriter:
    def __init__(self):
        self._chunks = []
        self._size = 0

    def add(self, array, dtype="f8"):
        """Append an array and return its directory entry."""
        arr = np.ascontiguousarray(array, dtype=_DTYPES[dtype])
        raw = arr.tobytes()
        entry = {"dtype": dtype, "shape": list(arr.shape), "offset": self._size, "nbytes": len(raw)}
        self._chunks.append(raw)
        self._size += len(raw)
        return entry

    def getvalue(self) -> bytes:
        return b"".join(self._chunks)


def dumps_header(header) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def pack(magic: bytes, header, payload: bytes) -> bytes:
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    head = dumps_header(header)
    pad = (-(16 + len(head))) % 8
    return magic + struct.pack("<Q", len(head)) + head + b"\0" * pad + payload


def unpack(blob: bytes, magic: bytes):
    """Return ``(header, payload)``; raises ValueError on a wrong magic."""
    if blob[:8] != magic:
        raise ValueError(f"bad magic {blob[:8]!r}, expected {magic!r}")
    (n,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + n].decode("utf-8"))
    start = 16 + n + (-(16 + n)) % 8
    return header, memoryview(blob)[start:]


def read_array(payload, entry) -> np.ndarray:
    dt = _DTYPES[entry["dtype"]]
    raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
    return np.frombuffer(raw, dtype=dt).reshape(entry["shape"]).astype(dt.newbyteorder("="))
