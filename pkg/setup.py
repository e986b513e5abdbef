"""Builds the optional compiled kernels.

The package works without the extension (a pure-numpy fallback is selected at
import time); `python setup.py build_ext --inplace` or a normal pip install
compiles the fast path.
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext = Extension(
    "vservo.kernels._core",
    ["src/vservo/kernels/_core.pyx"],
    include_dirs=[np.get_include()],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    optional=True,
)

setup(ext_modules=cythonize([ext], language_level="3"))
