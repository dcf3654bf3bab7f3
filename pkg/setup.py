import os

import numpy as np
from setuptools import Extension, setup

# POLCOH_NO_EXT=1 skips the compiled kernel; the package then runs on the numpy fallback.
if os.environ.get("POLCOH_NO_EXT"):
    ext_modules = []
else:
    from Cython.Build import cythonize

    extensions = [
        Extension(
            "polcoh.twa._rk4",
            ["src/polcoh/twa/_rk4.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
        )
    ]
    ext_modules = cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
