"""Modality-stable voxelwise features for correspondence tasks.

A fit/transform pipeline: slices of a volume are tokenized along all three
axes, reduced by joint per-axis PCA, concatenated per voxel, and projected by
a second stage fitted on a coarse grid; either correspondence-weighted
(paired training volumes) or a plain pooled PCA.  Transforming a new volume
needs only the saved projection bundle.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND as kernel_backend  # noqa: F401
from .errors import FormatError, NumericalError, ParameterError, VoxcorError  # noqa: F401
from .grid import (  # noqa: F401
    AXIS_A,
    AXIS_C,
    AXIS_S,
    DisplacementField,
    FeatureVolume,
    LabelVolume,
    Mask,
    Volume,
    avg_pool,
    normalize_ct,
    normalize_mr,
    normalize_p99,
    resample_affine,
    warp_displacement,
)
