import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    # no Cython: install the pure-Python fallback only
    setup()
else:
    extensions = [
        Extension(
            "car_heavytail._kernels",
            ["src/car_heavytail/_kernels.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3"],
        )
    ]
    setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
