"""Flat binary container for volumetric time series.

Layout: magic "VOL1", little-endian u32 extents X, Y, Z, T, little-endian
f32 voxel size (mm) and sampling interval (s), then X*Y*Z*T little-endian
f32 samples ordered t-major with z, y, x nested row-major (x fastest).
In memory the data is (T, X, Y, Z); the writer/reader transpose.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import InputError

MAGIC = b"VOL1"
_HEADER = struct.Struct("<IIIIff")


@dataclass
class Vol1File:
    data: np.ndarray      # (T, X, Y, Z) float32
    voxel_mm: float
    tr_s: float

    @property
    def grid(self):
        return self.data.shape[1:]


def write_vol1(path, data, voxel_mm, tr_s):
    """Serialize (T, X, Y, Z) or single-volume (X, Y, Z) data."""
    data = np.asarray(data)
    if data.ndim == 3:
        data = data[None]
    if data.ndim != 4:
        raise InputError(f"expected (T, X, Y, Z) data, got shape {data.shape}")
    t, x, y, z = data.shape
    payload = np.ascontiguousarray(data.transpose(0, 3, 2, 1), dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(x, y, z, t, voxel_mm, tr_s))
        fh.write(payload.tobytes())


def read_vol1(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise InputError(f"{path}: not a VOL1 file (magic {blob[:4]!r})")
    if len(blob) < 4 + _HEADER.size:
        raise InputError(f"{path}: truncated header")
    x, y, z, t, voxel_mm, tr_s = _HEADER.unpack_from(blob, 4)
    payload = np.frombuffer(blob, dtype="<f4", offset=4 + _HEADER.size)
    if payload.size != x * y * z * t:
        raise InputError(
            f"{path}: payload holds {payload.size} samples, header promises {x * y * z * t}")
    data = payload.reshape(t, z, y, x).transpose(0, 3, 2, 1)
    return Vol1File(data=np.ascontiguousarray(data), voxel_mm=voxel_mm, tr_s=tr_s)
