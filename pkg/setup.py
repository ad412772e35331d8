"""Build script for the optional compiled attention kernel.

The package is pure Python plus one Cython extension for the hot
attention kernel.  The extension is marked optional: if Cython or a C
compiler is unavailable the build proceeds and the package falls back
to the numpy kernel at import time (see treespec._kernels).

Set TREESPEC_NO_EXT=1 to skip the extension build entirely.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("TREESPEC_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "treespec._kernels._attn_cy",
                    ["src/treespec/_kernels/_attn_cy.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                    optional=True,
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
