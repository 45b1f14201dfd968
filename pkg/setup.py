"""Build script for the compiled kernel core.

The package works without the extension (a NumPy fallback is selected at
import time), so the Cython build is best-effort: if Cython or a C compiler
is unavailable the install proceeds pure-Python.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "accidentnet.kernels._core",
                ["src/accidentnet/kernels/_core.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
