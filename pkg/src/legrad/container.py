"""Bit-exact binary tensor container (magic ``LGTC``, version 1).

Layout: 4-byte magic, uint32 LE version, uint64 LE header length, a
space-padded UTF-8 JSON header, then a little-endian payload whose tensor
offsets are 64-byte aligned relative to the payload start. The full format
is documented in docs/container.md. Writing is deterministic: the same
tensors and metadata always produce the same bytes.
"""

from __future__ import annotations

import json
import os
from typing import Mapping

import numpy as np

MAGIC = b"LGTC"
VERSION = 1
ALIGNMENT = 64
_PREAMBLE = 16  # magic + version + header length

_DTYPE_TO_NAME = {np.dtype(np.float32): "float32", np.dtype(np.float64): "float64"}
_NAME_TO_DTYPE = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}


class ContainerError(Exception):
    """Base class; `code` is a stable machine-readable identifier."""

    code = "container_error"


class BadMagicError(ContainerError):
    code = "bad_magic"


class UnsupportedVersionError(ContainerError):
    code = "unsupported_version"


class TruncatedPayloadError(ContainerError):
    code = "truncated_payload"


class DuplicateNameError(ContainerError):
    code = "duplicate_name"


class HeaderError(ContainerError):
    code = "bad_header"


def _aligned(n: int) -> int:
    return (n + ALIGNMENT - 1) // ALIGNMENT * ALIGNMENT


def write_container(tensors: Mapping[str, np.ndarray], metadata: dict | None = None) -> bytes:
    """Serialize named tensors (and an optional JSON metadata dict) to bytes."""
    # sorted so identical content serializes identically regardless of
    # insertion order
    names = sorted(tensors.keys())
    if len(set(names)) != len(names):
        raise DuplicateNameError("tensor names must be unique")

    entries = []
    blobs = []
    offset = 0
    for name in names:
        arr = np.asarray(tensors[name])
        if arr.dtype not in _DTYPE_TO_NAME:
            raise HeaderError(f"unsupported dtype {arr.dtype} for entry '{name}'")
        blob = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
        offset = _aligned(offset)
        entries.append({
            "name": name,
            "dtype": _DTYPE_TO_NAME[arr.dtype],
            "shape": [int(s) for s in arr.shape],
            "byte_offset": offset,
            "byte_length": len(blob),
        })
        blobs.append((offset, blob))
        offset += len(blob)

    header = {"entries": entries, "metadata": metadata or {}}
    header_json = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    header_len = _aligned(_PREAMBLE + len(header_json)) - _PREAMBLE

    payload = bytearray(offset)
    for off, blob in blobs:
        payload[off:off + len(blob)] = blob

    out = bytearray()
    out += MAGIC
    out += VERSION.to_bytes(4, "little")
    out += header_len.to_bytes(8, "little")
    out += header_json.ljust(header_len, b" ")
    out += payload
    return bytes(out)


def read_container(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    """Parse container bytes; validates the header fully before touching payload."""
    if len(data) < _PREAMBLE or data[:4] != MAGIC:
        raise BadMagicError("not an LGTC container (bad magic)")
    version = int.from_bytes(data[4:8], "little")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported container version {version}")
    header_len = int.from_bytes(data[8:16], "little")
    payload_start = _PREAMBLE + header_len
    if payload_start > len(data):
        raise TruncatedPayloadError("file shorter than declared header")

    try:
        header = json.loads(data[_PREAMBLE:payload_start].decode("utf-8"))
        entries = header["entries"]
        metadata = header.get("metadata", {})
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise HeaderError(f"malformed container header: {exc}") from exc

    seen: set[str] = set()
    payload_len = len(data) - payload_start
    spans: list[tuple[int, int]] = []
    for entry in entries:
        try:
            name = entry["name"]
            dtype = _NAME_TO_DTYPE[entry["dtype"]]
            shape = tuple(int(s) for s in entry["shape"])
            off, length = int(entry["byte_offset"]), int(entry["byte_length"])
        except (KeyError, TypeError, ValueError) as exc:
            raise HeaderError(f"malformed entry: {exc}") from exc
        if name in seen:
            raise DuplicateNameError(f"duplicate tensor name '{name}'")
        seen.add(name)
        if off % ALIGNMENT:
            raise HeaderError(f"entry '{name}' offset {off} not {ALIGNMENT}-byte aligned")
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if length != expected:
            raise HeaderError(f"entry '{name}' length {length} != shape size {expected}")
        if off + length > payload_len:
            raise TruncatedPayloadError(f"entry '{name}' extends past end of file")
        spans.append((off, off + length))

    spans.sort()
    for (_, prev_end), (start, _) in zip(spans, spans[1:]):
        if start < prev_end:
            raise HeaderError("tensor payloads overlap")
    end = spans[-1][1] if spans else 0
    if payload_len != end:
        raise TruncatedPayloadError(
            f"file length mismatch: payload is {payload_len} bytes, entries end at {end}")

    tensors: dict[str, np.ndarray] = {}
    for entry in entries:
        dtype = _NAME_TO_DTYPE[entry["dtype"]]
        shape = tuple(int(s) for s in entry["shape"])
        off = payload_start + int(entry["byte_offset"])
        raw = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)),
                            offset=off)
        tensors[entry["name"]] = raw.reshape(shape).astype(dtype.newbyteorder("="), copy=True)
    return tensors, metadata


def save_container(path: str | os.PathLike, tensors: Mapping[str, np.ndarray],
                   metadata: dict | None = None) -> None:
    blob = write_container(tensors, metadata)
    with open(path, "wb") as f:
        f.write(blob)


def load_container(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        return read_container(f.read())
