"""Binary raster container ("BHSI") and preview export.

Layout (little-endian):
  bytes 0-3    magic b"BHSI"
  bytes 4-7    version (u32, currently 1)
  bytes 8-19   height, width, bands (u32 each)
  bytes 20-23  dtype code (u32; 0 = 32-bit float)
  bytes 24-    payload: row-major, band-interleaved-by-pixel float32 samples

The payload order is exactly C order of an (height, width, bands) array, so
writing and re-reading a float32 raster is bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .types import HSICube, RGBImage

__all__ = ["MAGIC", "VERSION", "write_raster", "read_raster", "write_cube",
           "read_cube", "write_reference", "read_reference", "write_preview"]

MAGIC = b"BHSI"
VERSION = 1
_DTYPE_F32 = 0
_HEADER = struct.Struct("<4sIIIII")


def write_raster(path, data: np.ndarray) -> None:
    """Write an (H, W, C) raster as a float32 container."""
    if data.ndim != 3:
        raise DataFormatError(f"raster must be 3-D, got shape {data.shape}")
    arr = np.ascontiguousarray(data, dtype="<f4")
    h, w, b = arr.shape
    header = _HEADER.pack(MAGIC, VERSION, h, w, b, _DTYPE_F32)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def read_raster(path) -> np.ndarray:
    """Read a container back into an (H, W, C) float32 array."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise DataFormatError(
            f"file too short for a container header: {len(blob)} < {_HEADER.size} bytes")
    magic, version, h, w, b, dtype_code = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise DataFormatError(f"bad magic {magic!r} at byte 0 (expected {MAGIC!r})")
    if version != VERSION:
        raise DataFormatError(f"unsupported version {version} at byte 4")
    if dtype_code != _DTYPE_F32:
        raise DataFormatError(f"unsupported dtype code {dtype_code} at byte 20")
    expected = h * w * b * 4
    actual = len(blob) - _HEADER.size
    if actual != expected:
        raise DataFormatError(
            f"payload at byte {_HEADER.size}: expected {expected} bytes, got {actual}")
    data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(h, w, b)
    return data.copy()


def write_cube(path, cube: HSICube) -> None:
    write_raster(path, cube.data)


def read_cube(path) -> HSICube:
    return HSICube(read_raster(path))


def write_reference(path, image: RGBImage) -> None:
    write_raster(path, image.data)


def read_reference(path) -> RGBImage:
    return RGBImage(read_raster(path))


def write_preview(path, cube: HSICube) -> None:
    """False-color PNG from three spread-out bands, clamped to [0, 1]."""
    from PIL import Image

    b = cube.bands
    picks = [min(b - 1, int(round(f * (b - 1)))) for f in (0.8, 0.5, 0.2)]
    rgb = np.clip(cube.data[:, :, picks], 0.0, 1.0)
    Image.fromarray((rgb * 255.0).round().astype(np.uint8), mode="RGB").save(path)
