"""Build the optional Cython kernels; the package still installs without them."""
import os
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing etc.
            print(f"warning: skipping compiled kernels ({exc})", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: failed to build {ext.name} ({exc})", file=sys.stderr)


def extensions():
    if os.environ.get("THYROFNA_PURE_PYTHON"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    exts = [
        Extension(
            "thyrofna._kernels._ccl",
            ["src/thyrofna/_kernels/_ccl.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ]
    return cythonize(exts, compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
