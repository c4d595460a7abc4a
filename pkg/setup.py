"""
Build script for the optional compiled kernel-assembly core.

    pip install -e . --no-build-isolation

If the Cython extension fails to build, the package still installs and the
pure-Python assembly path is used at import time.
"""
import os
import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, Cython missing, ...
            print(f"warning: compiled core not built ({exc}); using pure-Python fallback",
                  file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: failed to build {ext.name} ({exc})", file=sys.stderr)


def extensions():
    if os.environ.get("KERNELSKEL_NO_EXT"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    ext = Extension(
        "kernelskel._kernels_ext",
        ["src/kernelskel/_kernels_ext.pyx"],
        include_dirs=[numpy.get_include()],
        # no -ffast-math: the fallback must agree bit-for-bit
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    try:
        return cythonize([ext], language_level=3, quiet=True)
    except Exception as exc:
        print(f"warning: cythonize failed ({exc}); using pure-Python fallback", file=sys.stderr)
        return []


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
