"""Build the optional compiled integrator kernel.

If Cython or a C compiler is missing the package still installs and falls
back to the NumPy implementation.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("AMBIENT_INERTIA_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("ambient_inertia._kernel", ["src/ambient_inertia/_kernel.pyx"],
                       include_dirs=[numpy.get_include()],
                       extra_compile_args=["-O3"])],
            compiler_directives={"language_level": 3},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
