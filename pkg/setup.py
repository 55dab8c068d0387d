import os

import numpy as np
from setuptools import Extension, setup

# OMNIBEV_NO_EXT=1 skips the compiled core; the package then runs on its numpy fallback.
ext_modules = []
if not os.environ.get("OMNIBEV_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "omnibev._kernels",
                ["src/omnibev/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # keep a*b+c unfused so both backends round identically
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
