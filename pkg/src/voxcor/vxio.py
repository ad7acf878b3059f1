"""Volume container format (.vxvol).

Little-endian layout:

    magic   4 bytes  b"VXV1"
    rank    u32      always 3
    dims    u32[3]   (D, H, W)
    chans   u32      1 for scalar volumes/masks/labels, 3 for displacement
                     fields, C for feature volumes
    spacing f32[3]   mm per voxel
    data    f32[D*H*W*chans]  row-major, channel-last

Masks store {0, 1}, label volumes store exact small integers as f32.
"""

import struct

import numpy as np

from .errors import FormatError
from .grid import DisplacementField, FeatureVolume, LabelVolume, Mask, Volume

MAGIC = b"VXV1"


def _write_raw(path, data, spacing):
    data = np.ascontiguousarray(data, dtype="<f4")
    d, h, w, c = data.shape
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<5I", 3, d, h, w, c))
        f.write(struct.pack("<3f", *spacing))
        data.tofile(f)


def _read_raw(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        head = f.read(20 + 12)
        if len(head) != 32:
            raise FormatError(f"{path}: truncated header")
        rank, d, h, w, c = struct.unpack("<5I", head[:20])
        spacing = struct.unpack("<3f", head[20:])
        if rank != 3:
            raise FormatError(f"{path}: unsupported rank {rank}")
        if min(d, h, w) < 1 or c < 1:
            raise FormatError(f"{path}: bad dims {(d, h, w)} channels {c}")
        if any(s <= 0 for s in spacing):
            raise FormatError(f"{path}: non-positive spacing {spacing}")
        n = d * h * w * c
        data = np.fromfile(f, dtype="<f4", count=n)
        if data.size != n:
            raise FormatError(f"{path}: truncated payload ({data.size} of {n} values)")
        if f.read(1) != b"":
            raise FormatError(f"{path}: trailing bytes after payload")
    if not np.isfinite(data).all():
        raise FormatError(f"{path}: non-finite values in payload")
    return data.reshape(d, h, w, c), tuple(float(s) for s in spacing)


def save_volume(path, vol):
    _write_raw(path, vol.data[..., None], vol.spacing)


def load_volume(path):
    data, spacing = _read_raw(path)
    if data.shape[3] != 1:
        raise FormatError(f"{path}: expected 1 channel, got {data.shape[3]}")
    return Volume(data[..., 0], spacing)


def save_feature(path, feat):
    _write_raw(path, feat.data, feat.spacing)


def load_feature(path):
    data, spacing = _read_raw(path)
    return FeatureVolume(data, spacing)


def save_mask(path, mask):
    _write_raw(path, mask.data.astype(np.float32)[..., None], mask.spacing)


def load_mask(path):
    data, spacing = _read_raw(path)
    if data.shape[3] != 1:
        raise FormatError(f"{path}: expected 1 channel, got {data.shape[3]}")
    vals = data[..., 0]
    if not np.isin(vals, (0.0, 1.0)).all():
        raise FormatError(f"{path}: mask values must be 0 or 1")
    return Mask(vals > 0.5, spacing)


def save_labels(path, labels):
    _write_raw(path, labels.data.astype(np.float32)[..., None], labels.spacing)


def load_labels(path):
    data, spacing = _read_raw(path)
    if data.shape[3] != 1:
        raise FormatError(f"{path}: expected 1 channel, got {data.shape[3]}")
    vals = data[..., 0]
    if not np.array_equal(np.rint(vals), vals):
        raise FormatError(f"{path}: label values must be integers")
    return LabelVolume(vals.astype(np.int32), spacing)


def save_displacement(path, disp):
    _write_raw(path, disp.data, disp.spacing)


def load_displacement(path):
    data, spacing = _read_raw(path)
    if data.shape[3] != 3:
        raise FormatError(f"{path}: expected 3 channels, got {data.shape[3]}")
    return DisplacementField(data, spacing)
