"""Build script: compiles the optional Cython kernel extension when possible.

The package is fully functional without the extension (a numpy fallback is
selected at import time), so any build failure here degrades gracefully to
a pure-Python install instead of aborting.
"""

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Swallow compiler failures; the numpy kernel fallback takes over."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing toolchain, etc.
            print(f"warning: skipping compiled kernels ({exc}); "
                  "pure-Python kernels will be used")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: could not build {ext.name} ({exc}); "
                  "pure-Python kernels will be used")


def _extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("warning: Cython not available; building without compiled kernels")
        return []
    ext = Extension("arml._kernels_cy", ["src/arml/_kernels_cy.pyx"])
    return cythonize([ext], language_level=3)


setup(ext_modules=_extensions(), cmdclass={"build_ext": OptionalBuildExt})
