"""Build script for the optional compiled kernel core.

The package works without the extension (a numpy fallback is selected at
import time); set VOXCOR_NO_EXT=1 to skip compilation entirely.
"""

import os

import numpy as np
from setuptools import setup

ext_modules = []
if not os.environ.get("VOXCOR_NO_EXT"):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "voxcor._kernels._core",
                    ["src/voxcor/_kernels/_core.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    # no contracted multiply-adds: the trilinear sampler must
                    # match the numpy backend bitwise
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            language_level=3,
        )
    except Exception:
        ext_modules = []

setup(ext_modules=ext_modules)
