import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "splitproof.kernels._ckernels",
                ["src/splitproof/kernels/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                # -ffp-contract=off: the Python fallback must produce
                # bit-identical doubles, so no FMA contraction here.
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
