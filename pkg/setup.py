"""Builds the optional compiled scoring kernels.

The package works without the extension (NumPy fallback selected at
import); the build is skipped gracefully when Cython or a compiler is
missing.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/memloop/index/_kernels.pyx"],
        compiler_directives={"language_level": 3},
    )
    for ext in ext_modules:
        ext.include_dirs.append(np.get_include())
        # let the compiler vectorize the dot-product reductions
        ext.extra_compile_args = ["-O3", "-ffast-math"]
except ImportError as exc:
    print(f"skipping compiled kernels ({exc}); NumPy fallback will be used")

setup(ext_modules=ext_modules)
