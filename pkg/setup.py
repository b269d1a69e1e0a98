import os

import numpy as np
from setuptools import Extension, setup

# LPABFT_NO_EXT=1 builds a pure-Python install (numpy fallback kernels only).
ext_modules = []
if not os.environ.get("LPABFT_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "lpabft._kernels",
                ["src/lpabft/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # no -ffast-math: the EB kernel must round exactly like the numpy fallback
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "initializedcheck": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
