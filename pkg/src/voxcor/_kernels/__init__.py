"""Kernel backend selection.

The hot loops (box filtering, resampling, flood fill, top-k selection) exist
twice: a Cython extension and a numpy/scipy fallback.  The environment
variable VOXCOR_KERNELS picks one of "auto" (default), "cython", "numpy";
"auto" prefers the extension and silently falls back when it is not built.
"""

import os

_choice = os.environ.get("VOXCOR_KERNELS", "auto")
if _choice not in ("auto", "cython", "numpy"):
    raise RuntimeError(
        f"VOXCOR_KERNELS must be one of auto/cython/numpy, got {_choice!r}"
    )

if _choice == "numpy":
    from . import _numpy as _impl
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _choice == "cython":
            raise
        from . import _numpy as _impl

BACKEND = _impl.BACKEND
box_mean_3d = _impl.box_mean_3d
sample_at = _impl.sample_at
resample_affine = _impl.resample_affine
flood_fill_6 = _impl.flood_fill_6
topk_desc = _impl.topk_desc
vote_majority = _impl.vote_majority
