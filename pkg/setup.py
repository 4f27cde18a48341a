"""Build script: compiles the optional Cython kernel core.

The package works without the extension (a pure numpy fallback is selected at
import time); the build therefore degrades gracefully when Cython or a C
compiler is missing. -ffp-contract=off keeps the compiled kernels bit-identical
to the pure path (no FMA contraction reassociating the float arithmetic).
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "hoisynth.kernels._core",
                ["src/hoisynth/kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
