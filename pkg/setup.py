"""Builds the optional Cython simulator core.

The package works without it: flowplace.simulate falls back to the pure-Python
event loop when flowplace._simcore is not importable.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [Extension("flowplace._simcore", ["src/flowplace/_simcore.pyx"])],
        language_level=3,
    )

setup(ext_modules=ext_modules)
