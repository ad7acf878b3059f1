"""Modality-robust self-similarity descriptor.

Each voxel gets 12 channels, one per unordered pair of non-opposite offsets
in the dilated 6-neighborhood.  With unit offsets n0..n5 ordered
(-z, +z, -y, +y, -x, +x) and scaled by the dilation, the channel order is the
lexicographic pair list

    (0,2) (0,3) (0,4) (0,5) (1,2) (1,3) (1,4) (1,5) (2,4) (2,5) (3,4) (3,5)

For a pair (a, b) the raw response is the squared difference of the two
shifted volumes, box-filtered over a (2r+1)^3 patch; the 12 responses are
divided by their per-voxel mean (clamped below by the variance floor) and
mapped through exp(-x).  Values therefore lie in (0, 1], and a constant
volume maps to exactly 1 in every channel.  Edges are handled by replication
padding at both the shift and the filter stage.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ParameterError
from .grid import FeatureVolume

_UNIT_OFFSETS = (
    (-1, 0, 0),
    (1, 0, 0),
    (0, -1, 0),
    (0, 1, 0),
    (0, 0, -1),
    (0, 0, 1),
)

PAIRS = tuple(
    (a, b)
    for a in range(6)
    for b in range(a + 1, 6)
    if tuple(-v for v in _UNIT_OFFSETS[a]) != _UNIT_OFFSETS[b]
)

N_CHANNELS = len(PAIRS)


@dataclass
class MindConfig:
    radius: int = 2
    dilation: int = 2
    variance_floor: float = 1e-6

    def validate(self):
        if self.radius < 0 or int(self.radius) != self.radius:
            raise ParameterError(f"radius must be a non-negative int, got {self.radius}")
        if self.dilation < 1 or int(self.dilation) != self.dilation:
            raise ParameterError(f"dilation must be a positive int, got {self.dilation}")
        if self.variance_floor <= 0:
            raise ParameterError(
                f"variance_floor must be positive, got {self.variance_floor}"
            )


def _shifted(padded, offset, dims, d):
    sl = tuple(
        slice(d + o * d, d + o * d + n) for o, n in zip(offset, dims)
    )
    return padded[sl]


def mind_descriptor(vol, cfg=None):
    """12-channel self-similarity descriptor of a scalar volume."""
    if cfg is None:
        cfg = MindConfig()
    cfg.validate()
    d = int(cfg.dilation)
    r = int(cfg.radius)
    dims = vol.data.shape
    padded = np.pad(vol.data, d, mode="edge")

    ssd = np.empty(dims + (N_CHANNELS,), dtype=np.float32)
    for c, (a, b) in enumerate(PAIRS):
        diff = _shifted(padded, _UNIT_OFFSETS[a], dims, d) - _shifted(
            padded, _UNIT_OFFSETS[b], dims, d
        )
        ssd[..., c] = _kernels.box_mean_3d(diff * diff, r)

    var = ssd.astype(np.float64).mean(axis=-1)
    np.maximum(var, cfg.variance_floor, out=var)
    out = np.exp(-(ssd.astype(np.float64) / var[..., None]))
    return FeatureVolume(out.astype(np.float32), vol.spacing)
