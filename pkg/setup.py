"""Build script for the optional Cython kernels.

The package works without the compiled extension; ``wxscale.kernels`` falls
back to the numpy implementation when ``wxscale._kernels`` is missing.
Set ``WXSCALE_NO_EXT=1`` to skip the build entirely.
"""
import os

from setuptools import Extension, setup


def _extensions():
    if os.environ.get("WXSCALE_NO_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "wxscale._kernels",
        ["src/wxscale/_kernels.pyx"],
        include_dirs=[np.get_include()],
        # no -ffast-math: both backends must agree bit for bit
        extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )


setup(ext_modules=_extensions())
