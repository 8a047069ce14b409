import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # fall back to the pure-Python kernels
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("fedpeft.numkit._ckernels", ["src/fedpeft/numkit/_ckernels.pyx"],
                   include_dirs=[np.get_include()], extra_compile_args=["-O3", "-ffast-math"], extra_link_args=["-lmvec", "-lm"],
                   optional=True)],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
