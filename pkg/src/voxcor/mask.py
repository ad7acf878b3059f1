"""Descriptor-based foreground masking.

Background is detected where all 12 self-similarity channels exceed tau
(near-constant neighborhoods), then enclosed background pockets are folded
into the foreground: a voxel stays background only if it is 6-connected to
the volume boundary through background.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ParameterError
from .grid import Mask, Volume, avg_pool, require_same_dims, resample_affine, warp_displacement
from .mind import MindConfig, mind_descriptor


@dataclass
class MaskConfig:
    tau: float = 0.99
    mind: MindConfig = field(default_factory=MindConfig)

    def validate(self):
        if not 0.0 < self.tau <= 1.0:
            raise ParameterError(f"tau must be in (0, 1], got {self.tau}")
        self.mind.validate()


def raw_background(desc, tau=0.99):
    """Voxels whose descriptor channels all exceed tau."""
    if not 0.0 < tau <= 1.0:
        raise ParameterError(f"tau must be in (0, 1], got {tau}")
    if desc.channels != 12:
        raise ParameterError(
            f"expected a 12-channel descriptor, got {desc.channels} channels"
        )
    return Mask(np.all(desc.data > tau, axis=-1), desc.spacing)


def hole_fill(bg):
    """Foreground = complement of the boundary-reachable background.

    Background voxels with no 6-connected path to the volume boundary are
    enclosed pockets and become foreground.
    """
    reachable = _kernels.flood_fill_6(np.ascontiguousarray(bg.data))
    return Mask(~reachable, bg.spacing)


def foreground_mask(vol, cfg=None):
    """Full masking chain: descriptor, background test, hole fill."""
    if cfg is None:
        cfg = MaskConfig()
    cfg.validate()
    desc = mind_descriptor(vol, cfg.mind)
    return hole_fill(raw_background(desc, cfg.tau))


def mask_intersection(a, b):
    require_same_dims(a, b, "masks")
    return Mask(a.data & b.data, a.spacing)


def warp_mask(mask, params=None, disp=None, threshold=0.5):
    """Resample a mask (trilinear on its {0,1} values) and re-threshold.

    Exactly one of `params` (per-axis affine) or `disp` (displacement field)
    selects the warp.  Voxels whose interpolated occupancy is >= threshold
    are foreground.
    """
    if (params is None) == (disp is None):
        raise ParameterError("warp_mask needs exactly one of params or disp")
    vol = Volume(mask.data.astype(np.float32), mask.spacing)
    if params is not None:
        warped = resample_affine(vol, params, "trilinear")
    else:
        warped = warp_displacement(vol, disp, "trilinear")
    return Mask(warped.data >= threshold, mask.spacing)


def pool_mask(mask, factor, frac=0.5):
    """Coarse-grid mask: a block is foreground if its mean occupancy >= frac."""
    pooled = avg_pool(Volume(mask.data.astype(np.float32), mask.spacing), factor)
    return Mask(pooled.data >= frac, pooled.spacing)
