"""Single-file parameter container.

Layout: an 8-byte little-endian length, a UTF-8 JSON manifest, then the
parameters as little-endian float32 in manifest order.
"""
from __future__ import annotations

import json
import struct

import numpy as np

FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")


class CheckpointError(ValueError):
    pass


def write_container(path, arrays, meta=None):
    entries = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.ndim == 1:
            rows, cols = arr.shape[0], 1
        elif arr.ndim == 2:
            rows, cols = arr.shape
        else:
            raise CheckpointError(f"{name}: only 1-D/2-D parameters are supported")
        entries.append({"name": name, "rows": int(rows), "cols": int(cols),
                        "ndim": arr.ndim, "offset": offset})
        offset += rows * cols * 4
    manifest = {"format_version": FORMAT_VERSION, "meta": meta or {}, "params": entries,
                "data_bytes": offset}
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_LEN.pack(len(header)))
        fh.write(header)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_container(path):
    """Return ``(manifest, {name: array})``; raises before building any state."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _LEN.size:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = _LEN.unpack_from(blob, 0)
    start = _LEN.size + hlen
    if len(blob) < start:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob[_LEN.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {manifest.get('format_version')} != {FORMAT_VERSION}")
    data = blob[start:]
    if len(data) != manifest["data_bytes"]:
        raise CheckpointError(
            f"{path}: expected {manifest['data_bytes']} data bytes, found {len(data)} (truncated?)")
    arrays = {}
    for e in manifest["params"]:
        n = e["rows"] * e["cols"]
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=e["offset"]).astype(np.float32)
        arrays[e["name"]] = arr.reshape(e["rows"]) if e["ndim"] == 1 else arr.reshape(e["rows"], e["cols"])
    return manifest, arrays
