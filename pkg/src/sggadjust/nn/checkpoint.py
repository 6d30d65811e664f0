"""Flat parameter checkpoints with a (name, shape, offset) manifest.

Values are stored as JSON floats; Python's float repr is the shortest string
that round-trips, so save/load is bit-exact for finite doubles.
"""
from __future__ import annotations

import numpy as np

from ..errors import FormatError


def pack(arrays: dict[str, np.ndarray]) -> dict:
    manifest = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.reshape(-1))
        offset += arr.size
    flat = np.concatenate(chunks) if chunks else np.zeros(0)
    if not np.isfinite(flat).all():
        raise FormatError("refusing to checkpoint non-finite parameters")
    return {"manifest": manifest, "data": [float(v) for v in flat]}


def unpack(payload: dict) -> dict[str, np.ndarray]:
    try:
        manifest = payload["manifest"]
        flat = np.asarray(payload["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed parameter payload: {exc}") from exc
    out = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        if start + size > flat.size:
            raise FormatError(f"parameter '{entry['name']}' runs past the data block")
        out[entry["name"]] = flat[start:start + size].reshape(shape).copy()
    return out
