"""Build script for the compiled convolution kernels.

Cython regenerates the C when available; otherwise the checked-in _core.c
is compiled as is. The package works without the extension (a numpy
fallback is selected at import time), so a missing compiler only costs
speed, not functionality.
"""

import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None


def make_ext(source):
    return Extension(
        "pinpred._kernels._core",
        [source],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )


if cythonize is not None:
    ext_modules = cythonize(
        [make_ext("src/pinpred/_kernels/_core.pyx")],
        compiler_directives={"language_level": "3"},
    )
elif os.path.exists("src/pinpred/_kernels/_core.c"):
    ext_modules = [make_ext("src/pinpred/_kernels/_core.c")]
else:
    ext_modules = []

setup(ext_modules=ext_modules)
