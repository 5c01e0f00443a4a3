"""Build script for the optional compiled kernel extension.

The package works without the extension (a numpy fallback is selected at
import time); building it just makes the sliding-window nuclear-norm and
box-mean kernels considerably faster.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "fusezca.kernels._native",
                sources=["src/fusezca/kernels/_native.pyx"],
            )
        ],
        language_level="3",
    )

setup(ext_modules=ext_modules)
