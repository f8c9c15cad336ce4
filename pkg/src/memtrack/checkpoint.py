"""Single-file parameter checkpoints.

Layout::

    b"STMT0001"                      8-byte magic / version
    uint64 little-endian             manifest length in bytes
    manifest                         UTF-8 JSON: {name: {shape, dtype, offset, nbytes}}
    payload                          little-endian raw scalars, offsets relative to payload start
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"STMT0001"
_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    manifest: dict = {}
    offset = 0
    chunks = []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        kind = arr.dtype.name
        if kind not in _DTYPES:
            raise CheckpointError(f"{name}: unsupported dtype {kind}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[kind]).tobytes()
        manifest[name] = {"shape": list(arr.shape), "dtype": kind, "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    header = {"tensors": manifest, "meta": dict(meta or {})}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for raw in chunks:
            fh.write(raw)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:8]!r}")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + n].decode("utf-8"))
    payload = memoryview(data)[16 + n :]
    arrays = {}
    for name, entry in header["tensors"].items():
        start = entry["offset"]
        raw = payload[start : start + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]]).astype(entry["dtype"])
        arrays[name] = arr.reshape(entry["shape"])
    return arrays, header.get("meta", {})
