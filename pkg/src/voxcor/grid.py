"""Volume containers and grid-level operations.

All volumes are dense row-major arrays with axis order (S, C, A): axis 0 is
the sagittal slice index, axis 1 coronal, axis 2 axial.  Intensities and
features are float32 in memory; fitting code promotes to float64 where it
accumulates.  Spacing is millimetres per voxel along each axis.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ParameterError

AXIS_S = 0
AXIS_C = 1
AXIS_A = 2
AXIS_NAMES = ("S", "C", "A")


def _check_spacing(spacing):
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or any(s <= 0 for s in spacing):
        raise ParameterError(f"spacing must be 3 positive floats, got {spacing}")
    return spacing


@dataclass
class Volume:
    """Scalar volume, shape (D, H, W)."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ParameterError(f"Volume data must be 3-d, got {self.data.shape}")
        self.spacing = _check_spacing(self.spacing)

    @property
    def dims(self):
        return self.data.shape


@dataclass
class FeatureVolume:
    """Channel-last feature volume, shape (D, H, W, C)."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 4:
            raise ParameterError(
                f"FeatureVolume data must be 4-d, got {self.data.shape}"
            )
        self.spacing = _check_spacing(self.spacing)

    @property
    def dims(self):
        return self.data.shape[:3]

    @property
    def channels(self):
        return self.data.shape[3]


@dataclass
class Mask:
    """Boolean volume, shape (D, H, W)."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data).astype(bool)
        if self.data.ndim != 3:
            raise ParameterError(f"Mask data must be 3-d, got {self.data.shape}")
        self.spacing = _check_spacing(self.spacing)

    @property
    def dims(self):
        return self.data.shape


@dataclass
class LabelVolume:
    """Integer label volume, shape (D, H, W); 0 is background."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype.kind == "f":
            rounded = np.rint(arr)
            if not np.array_equal(rounded, arr):
                raise ParameterError("label values must be integers")
            arr = rounded
        self.data = arr.astype(np.int32)
        if self.data.ndim != 3:
            raise ParameterError(f"LabelVolume data must be 3-d, got {self.data.shape}")
        self.spacing = _check_spacing(self.spacing)

    @property
    def dims(self):
        return self.data.shape


@dataclass
class DisplacementField:
    """Per-voxel displacement in millimetres, shape (D, H, W, 3)."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 4 or self.data.shape[3] != 3:
            raise ParameterError(
                f"DisplacementField data must be (D, H, W, 3), got {self.data.shape}"
            )
        self.spacing = _check_spacing(self.spacing)

    @property
    def dims(self):
        return self.data.shape[:3]


def require_same_dims(a, b, what="volumes"):
    if tuple(a.dims) != tuple(b.dims):
        raise ParameterError(f"{what} have mismatched dims {a.dims} vs {b.dims}")


def _rescale_to_unit(data, hi, what):
    lo = float(data.min())
    if hi <= lo:
        warnings.warn(
            f"{what}: degenerate intensity range (all values equal), output is zero",
            RuntimeWarning,
            stacklevel=3,
        )
        return np.zeros_like(data, dtype=np.float32)
    out = (np.minimum(data.astype(np.float64), hi) - lo) / (hi - lo)
    return out.astype(np.float32)


def normalize_mr(vol):
    """Clip at the 97th percentile, rescale to [0, 1]."""
    hi = float(np.percentile(vol.data, 97.0))
    return Volume(_rescale_to_unit(vol.data, hi, "normalize_mr"), vol.spacing)


def normalize_p99(vol):
    """Clip at the 99th percentile, rescale to [0, 1]."""
    hi = float(np.percentile(vol.data, 99.0))
    return Volume(_rescale_to_unit(vol.data, hi, "normalize_p99"), vol.spacing)


def normalize_ct(vol, level=50.0, width=400.0):
    """Window the intensity range [level - width/2, level + width/2] to [0, 1]."""
    if width <= 0:
        raise ParameterError(f"window width must be positive, got {width}")
    lo = level - width / 2.0
    out = (np.clip(vol.data.astype(np.float64), lo, lo + width) - lo) / width
    return Volume(out.astype(np.float32), vol.spacing)


NORMALIZERS = {
    "mr": normalize_mr,
    "ct": normalize_ct,
    "p99": normalize_p99,
    "none": lambda v: Volume(v.data.copy(), v.spacing),
}


def _check_params(params):
    params = [(float(s), float(d)) for s, d in params]
    if len(params) != 3:
        raise ParameterError("resample_affine needs one (sigma, delta) pair per axis")
    for s, _ in params:
        if s <= 0:
            raise ParameterError(f"resample scale must be positive, got {s}")
    return params


def resample_affine(vol, params, interp="trilinear"):
    """Per-axis affine resample: output voxel i samples the input at
    sigma_a * i + delta_a along each axis; out-of-range samples are zero.

    vol: Volume, FeatureVolume, or LabelVolume (nearest only).
    params: three (sigma, delta) pairs in axis order.
    interp: "trilinear" or "nearest".
    """
    params = _check_params(params)
    if interp not in ("trilinear", "nearest"):
        raise ParameterError(f"unknown interpolation {interp!r}")
    sigma = np.array([p[0] for p in params], dtype=np.float64)
    delta = np.array([p[1] for p in params], dtype=np.float64)

    if isinstance(vol, LabelVolume):
        if interp != "nearest":
            raise ParameterError("label volumes must be resampled with nearest")
        out = _kernels.resample_affine(
            vol.data.astype(np.float32)[..., None], sigma, delta, True
        )
        return LabelVolume(out[..., 0].astype(np.int32), vol.spacing)
    if isinstance(vol, Volume):
        out = _kernels.resample_affine(
            vol.data[..., None], sigma, delta, interp == "nearest"
        )
        return Volume(out[..., 0], vol.spacing)
    if isinstance(vol, FeatureVolume):
        out = _kernels.resample_affine(vol.data, sigma, delta, interp == "nearest")
        return FeatureVolume(out, vol.spacing)
    raise ParameterError(f"cannot resample object of type {type(vol).__name__}")


def warp_displacement(vol, disp, interp="trilinear"):
    """Sample `vol` at x + psi(x): output voxel x reads the input at the voxel
    position displaced by psi(x) (psi in mm, converted via spacing)."""
    require_same_dims(vol, disp, "volume and displacement field")
    if interp not in ("trilinear", "nearest"):
        raise ParameterError(f"unknown interpolation {interp!r}")
    D, H, W = disp.dims
    sp = np.asarray(vol.spacing, dtype=np.float64)
    cz = np.arange(D, dtype=np.float64)[:, None, None] + disp.data[..., 0] / sp[0]
    cy = np.arange(H, dtype=np.float64)[None, :, None] + disp.data[..., 1] / sp[1]
    cx = np.arange(W, dtype=np.float64)[None, None, :] + disp.data[..., 2] / sp[2]
    cz, cy, cx = np.broadcast_arrays(cz, cy, cx)
    if isinstance(vol, Volume):
        out = _kernels.sample_at(vol.data[..., None], cz, cy, cx, interp == "nearest")
        return Volume(out[..., 0], vol.spacing)
    if isinstance(vol, FeatureVolume):
        out = _kernels.sample_at(vol.data, cz, cy, cx, interp == "nearest")
        return FeatureVolume(out, vol.spacing)
    raise ParameterError(f"cannot warp object of type {type(vol).__name__}")


def _avg_pool_data(data, factor):
    if factor < 1 or int(factor) != factor:
        raise ParameterError(f"pool factor must be a positive integer, got {factor}")
    factor = int(factor)
    acc = data.astype(np.float64)
    squeeze = acc.ndim == 3
    if squeeze:
        acc = acc[..., None]
    for axis in range(3):
        n = acc.shape[axis]
        starts = np.arange(0, n, factor)
        sums = np.add.reduceat(acc, starts, axis=axis)
        counts = np.minimum(starts + factor, n) - starts
        shape = [1, 1, 1, 1]
        shape[axis] = len(starts)
        acc = sums / counts.reshape(shape)
    out = acc.astype(np.float32)
    return out[..., 0] if squeeze else out


def avg_pool(vol, factor):
    """Block-average by an integer factor; edge blocks average the voxels
    actually present, so output dims are ceil(dim / factor)."""
    pooled_spacing = tuple(s * factor for s in vol.spacing)
    if isinstance(vol, Volume):
        return Volume(_avg_pool_data(vol.data, factor), pooled_spacing)
    if isinstance(vol, FeatureVolume):
        return FeatureVolume(_avg_pool_data(vol.data, factor), pooled_spacing)
    raise ParameterError(f"cannot pool object of type {type(vol).__name__}")
