"""Per-slice patch tokenization of volumes.

Volumes are encoded one 2-d slice at a time along each axis.  Slices are
taken at a fixed stride (plus the final slice when the stride does not land
on it); the in-between slices are filled by per-token linear interpolation.
Each encoded slice is resized by `scale`, tiled into `patch` x `patch`
blocks (trailing remainder dropped), and every block becomes one token.

Two encoder kinds share this geometry: "synthetic" computes eight per-block
statistics and mixes them through a fixed seeded random matrix; "precomputed"
ingests externally produced tokens from .vxfeat files.

.vxfeat layout (little-endian):

    magic    4 bytes  b"VXF1"
    axis     u32      0 = S, 1 = C, 2 = A
    n_enc    u32      number of encoded slices
    indices  u32[n_enc]
    P        u32      tokens per slice
    C        u32      channels per token
    patch    u32
    scale    f32
    tokens   f32[n_enc * P * C]   (slice, patch, channel) order
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParameterError
from .grid import AXIS_NAMES, FeatureVolume

STRIDE = 3
FEAT_MAGIC = b"VXF1"


def _round_half_up(x):
    return int(math.floor(x + 0.5))


@dataclass
class SliceEncoderSpec:
    kind: str = "synthetic"
    channels: int = 12
    patch: int = 4
    scale: float = 1.0
    seed: int = 0
    sign: int = 1
    source: str = ""

    def validate(self):
        if self.kind not in ("synthetic", "precomputed"):
            raise ParameterError(f"unknown encoder kind {self.kind!r}")
        if self.channels < 1:
            raise ParameterError(f"channels must be >= 1, got {self.channels}")
        if self.patch < 1:
            raise ParameterError(f"patch must be >= 1, got {self.patch}")
        if self.scale < 1.0:
            raise ParameterError(f"scale must be >= 1, got {self.scale}")
        if self.sign not in (-1, 1):
            raise ParameterError(f"sign must be +1 or -1, got {self.sign}")
        if self.kind == "precomputed" and not self.source:
            raise ParameterError("precomputed encoder needs a source directory")

    def mixing_matrix(self):
        """Fixed (C, 8) mixing matrix with unit-norm rows, seeded."""
        rng = np.random.default_rng(self.seed)
        m = rng.standard_normal((self.channels, N_STATS))
        m /= np.linalg.norm(m, axis=1, keepdims=True)
        return m


@dataclass
class PatchFeatureStack:
    """Tokens for the encoded slices along one axis."""

    axis: int
    tokens: np.ndarray        # (n_enc, P, C) float32
    slice_indices: np.ndarray  # (n_enc,) strictly increasing
    patch: int
    scale: float

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float32)
        self.slice_indices = np.asarray(self.slice_indices, dtype=np.int64)
        if self.tokens.ndim != 3:
            raise ParameterError(f"tokens must be (n, P, C), got {self.tokens.shape}")
        if self.slice_indices.ndim != 1 or len(self.slice_indices) != len(self.tokens):
            raise ParameterError("slice_indices must match the token count")
        if len(self.slice_indices) == 0:
            raise ParameterError("empty feature stack")
        if (np.diff(self.slice_indices) <= 0).any() or self.slice_indices[0] < 0:
            raise ParameterError("slice_indices must be strictly increasing and >= 0")
        if self.axis not in (0, 1, 2):
            raise ParameterError(f"axis must be 0, 1 or 2, got {self.axis}")


def encoded_slice_indices(n_slices, stride=STRIDE):
    """Every stride-th slice, plus the final slice if the stride misses it."""
    if n_slices < 1:
        raise ParameterError("need at least one slice")
    idx = list(range(0, n_slices, stride))
    if idx[-1] != n_slices - 1:
        idx.append(n_slices - 1)
    return np.asarray(idx, dtype=np.int64)


def resize_bilinear(img, out_h, out_w):
    """Bilinear resize with half-pixel centers and clamped edges."""
    h, w = img.shape
    if (out_h, out_w) == (h, w):
        return np.asarray(img, dtype=np.float32).copy()

    def src_coords(n_src, n_dst):
        c = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
        return np.clip(c, 0.0, n_src - 1.0)

    cy = src_coords(h, out_h)
    y0 = np.floor(cy).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    fy = cy - y0
    rows = img[y0] * (1.0 - fy)[:, None] + img[y1] * fy[:, None]

    cx = src_coords(w, out_w)
    x0 = np.floor(cx).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    fx = cx - x0
    out = rows[:, x0] * (1.0 - fx)[None, :] + rows[:, x1] * fx[None, :]
    return out.astype(np.float32)


def patch_grid_shape(slice_shape, patch, scale):
    """Patch grid (gh, gw) for a slice of the given shape after resizing."""
    rh = _round_half_up(scale * slice_shape[0])
    rw = _round_half_up(scale * slice_shape[1])
    gh, gw = rh // patch, rw // patch
    if gh < 1 or gw < 1:
        raise ParameterError(
            f"slice {slice_shape} smaller than one {patch}x{patch} patch "
            f"after resize by {scale}"
        )
    return gh, gw


N_STATS = 8


def _block_stats(resized, patch, gh, gw):
    """Eight stats per patch: mean, std, mean |dx|, mean |dy|, row/col
    centroid, mean |d2x|, mean |d2y|.

    The second differences keep the statistic basis at full rank 8 so a
    per-axis PCA with k up to 8 is well posed on generic content.
    """
    p = patch
    blocks = resized[: gh * p, : gw * p].reshape(gh, p, gw, p)
    blocks = blocks.transpose(0, 2, 1, 3).astype(np.float64)  # (gh, gw, p, p)
    stats = np.empty((gh, gw, N_STATS), dtype=np.float64)
    stats[..., 0] = blocks.mean(axis=(2, 3))
    stats[..., 1] = blocks.std(axis=(2, 3))
    if p > 1:
        stats[..., 2] = np.abs(np.diff(blocks, axis=3)).mean(axis=(2, 3))
        stats[..., 3] = np.abs(np.diff(blocks, axis=2)).mean(axis=(2, 3))
        w = np.abs(blocks)
        wsum = w.sum(axis=(2, 3))
        pos = np.arange(p, dtype=np.float64) / (p - 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            rc = (w * pos[:, None]).sum(axis=(2, 3)) / wsum
            cc = (w * pos[None, :]).sum(axis=(2, 3)) / wsum
        degenerate = wsum <= 1e-12
        rc[degenerate] = 0.5
        cc[degenerate] = 0.5
        stats[..., 4] = rc
        stats[..., 5] = cc
    else:
        stats[..., 2:4] = 0.0
        stats[..., 4:6] = 0.5
    if p > 2:
        stats[..., 6] = np.abs(np.diff(blocks, n=2, axis=3)).mean(axis=(2, 3))
        stats[..., 7] = np.abs(np.diff(blocks, n=2, axis=2)).mean(axis=(2, 3))
    else:
        stats[..., 6:8] = 0.0
    return stats.reshape(gh * gw, N_STATS)


def synthetic_encode_slice(slice2d, spec):
    """Encode one 2-d slice into (P, C) tokens."""
    spec.validate()
    slice2d = np.asarray(slice2d, dtype=np.float32)
    gh, gw = patch_grid_shape(slice2d.shape, spec.patch, spec.scale)
    rh = _round_half_up(spec.scale * slice2d.shape[0])
    rw = _round_half_up(spec.scale * slice2d.shape[1])
    resized = resize_bilinear(slice2d, rh, rw)
    stats = _block_stats(resized, spec.patch, gh, gw)
    tokens = stats @ spec.mixing_matrix().T
    if spec.sign < 0:
        tokens = -tokens
    return tokens.astype(np.float32)


def extract_axis_features(vol, spec, axis, stride=STRIDE):
    """Encode the stride-sampled slices of `vol` along `axis`.

    For the "precomputed" kind, tokens are read from
    `<source>/axis_<S|C|A>.vxfeat` and validated against the declared
    encoder geometry (axis, patch, channels, scale).
    """
    spec.validate()
    if axis not in (0, 1, 2):
        raise ParameterError(f"axis must be 0, 1 or 2, got {axis}")
    if spec.kind == "precomputed":
        stack = load_axis_features(precomputed_path(spec.source, axis))
        if stack.axis != axis:
            raise FormatError(
                f"feature file is for axis {stack.axis}, expected {axis}"
            )
        if stack.patch != spec.patch or stack.tokens.shape[2] != spec.channels:
            raise FormatError("feature file geometry does not match encoder spec")
        if abs(stack.scale - spec.scale) > 1e-6:
            raise FormatError("feature file scale does not match encoder spec")
        if spec.sign < 0:
            stack = PatchFeatureStack(
                stack.axis, -stack.tokens, stack.slice_indices, stack.patch, stack.scale
            )
        return stack

    indices = encoded_slice_indices(vol.data.shape[axis], stride)
    tokens = np.stack(
        [
            synthetic_encode_slice(np.take(vol.data, int(i), axis=axis), spec)
            for i in indices
        ]
    )
    return PatchFeatureStack(axis, tokens, indices, spec.patch, spec.scale)


def dense_tokens(stack, n_slices):
    """Per-token linear interpolation to all `n_slices` positions.

    Slices outside the encoded range copy the nearest encoded slice.
    """
    idx = stack.slice_indices
    if idx[-1] >= n_slices:
        raise ParameterError(
            f"encoded slice index {idx[-1]} out of range for {n_slices} slices"
        )
    n_enc, P, C = stack.tokens.shape
    out = np.empty((n_slices, P, C), dtype=np.float32)
    toks = stack.tokens.astype(np.float64)
    pos = np.arange(n_slices)
    hi = np.searchsorted(idx, pos, side="left")
    for i in range(n_slices):
        j = hi[i]
        if j < n_enc and idx[j] == i:
            out[i] = stack.tokens[j]
        elif j == 0:
            out[i] = stack.tokens[0]
        elif j == n_enc:
            out[i] = stack.tokens[-1]
        else:
            a, b = idx[j - 1], idx[j]
            w = (i - a) / float(b - a)
            out[i] = ((1.0 - w) * toks[j - 1] + w * toks[j]).astype(np.float32)
    return out


def patch_index_maps(slice_shape, patch, scale):
    """Voxel-to-patch index maps along slice rows and columns.

    Voxel (y, x) reads patch (floor(scale*y/patch), floor(scale*x/patch)),
    clamped so the trailing remainder strip extends the final patch.
    """
    gh, gw = patch_grid_shape(slice_shape, patch, scale)
    ys = np.floor(scale * np.arange(slice_shape[0], dtype=np.float64) / patch)
    xs = np.floor(scale * np.arange(slice_shape[1], dtype=np.float64) / patch)
    pr = np.minimum(ys.astype(np.int64), gh - 1)
    pc = np.minimum(xs.astype(np.int64), gw - 1)
    return pr, pc


def unpatchify(tokens, dims, axis, patch, scale, spacing=(1.0, 1.0, 1.0)):
    """Broadcast per-slice tokens back onto the voxel grid.

    tokens: (n_slices, P, k) with n_slices == dims[axis].  Every voxel reads
    the token of the patch its in-slice position maps to.
    """
    dims = tuple(int(d) for d in dims)
    other = [a for a in range(3) if a != axis]
    slice_shape = (dims[other[0]], dims[other[1]])
    gh, gw = patch_grid_shape(slice_shape, patch, scale)
    n_slices, P, k = tokens.shape
    if n_slices != dims[axis]:
        raise ParameterError(
            f"token stack has {n_slices} slices, volume has {dims[axis]}"
        )
    if P != gh * gw:
        raise ParameterError(
            f"token count {P} does not match the {gh}x{gw} patch grid"
        )
    pr, pc = patch_index_maps(slice_shape, patch, scale)
    grid = tokens.reshape(n_slices, gh, gw, k)
    dense = grid[:, pr[:, None], pc[None, :], :]  # (n_slices, h, w, k)
    dense = np.moveaxis(dense, 0, axis)
    return FeatureVolume(np.ascontiguousarray(dense), spacing)


def patch_foreground(mask, axis, slice_indices, patch, scale, frac=0.5):
    """Foreground flag per token: fraction of mapped voxels that are
    foreground is >= frac.  Returns (n_enc, P) bool."""
    dims = mask.data.shape
    other = [a for a in range(3) if a != axis]
    slice_shape = (dims[other[0]], dims[other[1]])
    gh, gw = patch_grid_shape(slice_shape, patch, scale)
    pr, pc = patch_index_maps(slice_shape, patch, scale)
    flat = pr[:, None] * gw + pc[None, :]
    counts = np.bincount(flat.ravel(), minlength=gh * gw)
    out = np.empty((len(slice_indices), gh * gw), dtype=bool)
    for n, i in enumerate(slice_indices):
        sl = np.take(mask.data, int(i), axis=axis)
        sums = np.bincount(flat.ravel(), weights=sl.ravel(), minlength=gh * gw)
        out[n] = sums / counts >= frac
    return out


def triplanar_concat(f_s, f_c, f_a):
    """Concatenate the three per-axis feature volumes along channels."""
    require = (f_s.dims, f_c.dims, f_a.dims)
    if len({tuple(d) for d in require}) != 1:
        raise ParameterError(f"axis feature volumes disagree on dims: {require}")
    data = np.concatenate([f_s.data, f_c.data, f_a.data], axis=-1)
    return FeatureVolume(data, f_s.spacing)


def precomputed_path(source, axis):
    return f"{source}/axis_{AXIS_NAMES[axis]}.vxfeat"


def save_axis_features(path, stack):
    n_enc, P, C = stack.tokens.shape
    with open(path, "wb") as f:
        f.write(FEAT_MAGIC)
        f.write(struct.pack("<2I", stack.axis, n_enc))
        f.write(stack.slice_indices.astype("<u4").tobytes())
        f.write(struct.pack("<3I", P, C, stack.patch))
        f.write(struct.pack("<f", stack.scale))
        np.ascontiguousarray(stack.tokens, dtype="<f4").tofile(f)


def load_axis_features(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FEAT_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {FEAT_MAGIC!r}")
        head = f.read(8)
        if len(head) != 8:
            raise FormatError(f"{path}: truncated header")
        axis, n_enc = struct.unpack("<2I", head)
        raw_idx = f.read(4 * n_enc)
        if len(raw_idx) != 4 * n_enc:
            raise FormatError(f"{path}: truncated slice index table")
        indices = np.frombuffer(raw_idx, dtype="<u4").astype(np.int64)
        tail = f.read(16)
        if len(tail) != 16:
            raise FormatError(f"{path}: truncated header")
        P, C, patch = struct.unpack("<3I", tail[:12])
        (scale,) = struct.unpack("<f", tail[12:])
        n = n_enc * P * C
        tokens = np.fromfile(f, dtype="<f4", count=n)
        if tokens.size != n:
            raise FormatError(f"{path}: truncated payload ({tokens.size} of {n})")
        if f.read(1) != b"":
            raise FormatError(f"{path}: trailing bytes after payload")
    if not np.isfinite(tokens).all():
        raise FormatError(f"{path}: non-finite token values")
    if axis not in (0, 1, 2):
        raise FormatError(f"{path}: bad axis id {axis}")
    if patch < 1 or scale < 1.0:
        raise FormatError(f"{path}: bad patch geometry patch={patch} scale={scale}")
    try:
        return PatchFeatureStack(
            int(axis), tokens.reshape(n_enc, P, C), indices, int(patch), float(scale)
        )
    except ParameterError as e:
        raise FormatError(f"{path}: {e}") from e
