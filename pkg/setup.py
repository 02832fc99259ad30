"""Builds the optional compiled kernel core.

The package is fully functional without it (a pure-numpy fallback is
selected at import time); the extension just makes the serial hot loops
fast.  Skipped automatically when Cython or a C toolchain is missing.
"""

from setuptools import Extension, setup

ext_modules = []
include_dirs = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext = Extension(
        "fragmenta.kernels._speedups",
        ["src/fragmenta/kernels/_speedups.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
    )
    ext_modules = cythonize([ext], compiler_directives={"language_level": "3"})
except ImportError:
    pass

setup(ext_modules=ext_modules)
