"""Build the optional Cython kernels.

If Cython or a C compiler is missing the package still installs; the
pure-numpy kernels are used instead (see ``codealign.kernels``).
"""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("CODEALIGN_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "codealign._ckernels",
                    ["src/codealign/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
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
