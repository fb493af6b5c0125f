import os

import numpy as np
from setuptools import Extension, setup

# MFVPINN_NO_EXT=1 skips the compiled kernels; the package then runs on the
# pure-numpy fallback.
ext_modules = []
if not os.environ.get("MFVPINN_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "mfvpinn._ckernels",
                ["src/mfvpinn/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
