"""Build hooks for the optional compiled kernel extension.

The package works without the extension (a pure numpy/Python fallback is
selected at import time); building it just makes the Levenshtein and bilinear
resize kernels faster. `-ffp-contract=off` keeps the compiled float path
bit-identical to the fallback.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "cream.kernels._native",
                ["src/cream/kernels/_native.pyx"],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
else:
    ext_modules = []

setup(ext_modules=ext_modules)
