import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    # No -ffast-math: the compiled core must be bit-identical to the
    # numpy fallback, so every float op stays strict IEEE.
    ext_modules = cythonize(
        [
            Extension(
                "rootchain._core",
                ["src/rootchain/_core.pyx"],
                include_dirs=[numpy.get_include()],
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

setup(ext_modules=ext_modules)
