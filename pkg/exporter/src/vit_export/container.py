"""LGTC version-1 writer, implemented from docs/container.md.

This is intentionally a second, independent implementation: the engine
reads what we write, and any drift between the two shows up as a parity
or validation failure rather than being masked by shared code.
"""

from __future__ import annotations

import json
from typing import Mapping

import numpy as np

MAGIC = b"LGTC"
VERSION = 1
ALIGNMENT = 64
PREAMBLE = 16

_DTYPES = {np.dtype(np.float32): "float32", np.dtype(np.float64): "float64"}


class WriteError(Exception):
    pass


def _align(n: int) -> int:
    return (n + ALIGNMENT - 1) // ALIGNMENT * ALIGNMENT


def write(tensors: Mapping[str, np.ndarray], metadata: dict | None = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        if arr.dtype not in _DTYPES:
            raise WriteError(f"'{name}': dtype {arr.dtype} not allowed in version 1")
        blob = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
        offset = _align(offset)
        entries.append({
            "name": name,
            "dtype": _DTYPES[arr.dtype],
            "shape": [int(s) for s in arr.shape],
            "byte_offset": offset,
            "byte_length": len(blob),
        })
        chunks.append((offset, blob))
        offset += len(blob)

    header = json.dumps({"entries": entries, "metadata": metadata or {}},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    header_len = _align(PREAMBLE + len(header)) - PREAMBLE

    payload = bytearray(offset)
    for off, blob in chunks:
        payload[off:off + len(blob)] = blob

    return (MAGIC + VERSION.to_bytes(4, "little")
            + header_len.to_bytes(8, "little")
            + header.ljust(header_len, b" ") + bytes(payload))


def save(path, tensors: Mapping[str, np.ndarray], metadata: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(write(tensors, metadata))
