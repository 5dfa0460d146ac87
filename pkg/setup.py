"""Build script: compiles the assignment-solver extension when Cython is available.

The package is fully functional without the extension (sgset.assign falls back
to the pure-Python solver), so any failure here downgrades to a warning instead
of aborting the install.
"""

import warnings

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/sgset/_assign_ext.pyx"],
        language_level=3,
        annotate=False,
    )
except Exception as exc:  # pragma: no cover - depends on build environment
    warnings.warn(f"skipping compiled assignment solver ({exc}); "
                  "pure-Python fallback will be used")

setup(ext_modules=ext_modules)
