"""Builds the optional Cython core; skipped when Cython is missing or AMPNET_NO_EXT is set."""
import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("AMPNET_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "ampnet.kernels._cconv",
                    ["src/ampnet/kernels/_cconv.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )

setup(ext_modules=ext_modules)
