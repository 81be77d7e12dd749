"""Binary container for named float64 tensors.

Layout::

    b"RPTENSOR"                 magic, 8 bytes
    uint32 LE                   format version
    uint64 LE                   header length in bytes
    header                      UTF-8 JSON: {"kind", "meta", "tensors": [{name, shape, offset, nbytes}]}
    data                        little-endian float64 arrays; offsets relative to data start
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"RPTENSOR"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<IQ")


def write_tensors(path, kind: str, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = json.dumps({"kind": kind, "meta": meta, "tensors": entries}, sort_keys=True).encode("utf-8")
    Path(path).write_bytes(MAGIC + _PREFIX.pack(FORMAT_VERSION, len(header)) + header + b"".join(blobs))


def read_tensors(path, kind: str) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    start = len(MAGIC) + _PREFIX.size
    if len(raw) < start or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a tensor file or truncated header")
    version, header_len = _PREFIX.unpack_from(raw, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if len(raw) < start + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    if header.get("kind") != kind:
        raise CheckpointError(f"{path}: holds {header.get('kind')!r}, expected {kind!r}")
    data = memoryview(raw)[start + header_len:]
    tensors = {}
    for entry in header["tensors"]:
        lo, n = entry["offset"], entry["nbytes"]
        shape = tuple(entry["shape"])
        if lo + n > len(data) or n != 8 * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"{path}: tensor {entry['name']!r} truncated or mis-sized")
        tensors[entry["name"]] = np.frombuffer(data[lo:lo + n], dtype="<f8").astype(np.float64).reshape(shape)
    expected = sum(e["nbytes"] for e in header["tensors"])
    if len(data) != expected:
        raise CheckpointError(f"{path}: {len(data)} data bytes, expected {expected}")
    return header["meta"], tensors
