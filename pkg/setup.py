"""Build script for the optional compiled kernel extension.

The package works without the extension (a pure-numpy fallback is selected
at import time); building it just makes training noticeably faster.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-python install still works
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "meshmark.kernels._fastops",
                ["src/meshmark/kernels/_fastops.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        language_level="3",
    )

setup(ext_modules=ext_modules)
