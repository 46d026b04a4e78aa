"""Named-tensor checkpoint container with an embedded config.

Layout (little-endian):
  bytes 0-3   magic b"UXCP"
  bytes 4-7   version (u32, currently 1)
  bytes 8-15  header length (u64)
  header      UTF-8 JSON: format_version, config, extra, tensor index
  payload     raw tensor bytes at the offsets recorded in the index

The header is serialized with sorted keys and the tensor index sorted by
name, so identical contents produce byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from .errors import DataFormatError

__all__ = ["save_checkpoint", "load_checkpoint", "CHECKPOINT_MAGIC"]

CHECKPOINT_MAGIC = b"UXCP"
CHECKPOINT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")

_DTYPES = {"f4": "<f4", "f8": "<f8", "i8": "<i8", "i4": "<i4"}
_CODES = {np.dtype("float32"): "f4", np.dtype("float64"): "f8",
          np.dtype("int64"): "i8", np.dtype("int32"): "i4"}


def save_checkpoint(path, tensors: Dict[str, np.ndarray], config: dict,
                    extra: dict | None = None) -> None:
    """Write named arrays plus JSON-safe config/extra metadata."""
    index = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        if arr.dtype not in _CODES:
            raise DataFormatError(f"unsupported tensor dtype {arr.dtype} for {name!r}")
        code = _CODES[arr.dtype]
        shape = list(arr.shape)  # ascontiguousarray would promote 0-d to 1-d
        blob = np.ascontiguousarray(arr).astype(_DTYPES[code]).tobytes()
        index.append({"name": name, "dtype": code, "shape": shape,
                      "offset": offset, "nbytes": len(blob)})
        chunks.append(blob)
        offset += len(blob)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": config,
        "extra": extra or {},
        "tensors": index,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for blob in chunks:
            fh.write(blob)


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict, dict]:
    """Read back ``(tensors, config, extra)``; validates structure and sizes."""
    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX.size:
        raise DataFormatError(
            f"file too short for a checkpoint header: {len(blob)} bytes")
    magic, version, header_len = _PREFIX.unpack_from(blob, 0)
    if magic != CHECKPOINT_MAGIC:
        raise DataFormatError(
            f"bad magic {magic!r} at byte 0 (expected {CHECKPOINT_MAGIC!r})")
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version} at byte 4")
    header_end = _PREFIX.size + header_len
    if len(blob) < header_end:
        raise DataFormatError(
            f"truncated header at byte {_PREFIX.size}: expected {header_len} bytes")
    try:
        header = json.loads(blob[_PREFIX.size:header_end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"invalid checkpoint header JSON: {exc}") from exc
    payload = blob[header_end:]
    tensors: Dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        code = entry["dtype"]
        if code not in _DTYPES:
            raise DataFormatError(f"unknown tensor dtype code {code!r}")
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise DataFormatError(
                f"tensor {entry['name']!r} at payload byte {start}: expected "
                f"{nbytes} bytes, only {len(payload) - start} available")
        arr = np.frombuffer(payload, dtype=_DTYPES[code], count=nbytes // np.dtype(
            _DTYPES[code]).itemsize, offset=start)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return tensors, header["config"], header["extra"]
