import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("WGLS_NO_EXT", "").strip() in ("", "0"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("wgls._kernels", ["src/wgls/_kernels.pyx"], include_dirs=[np.get_include()],
                       extra_compile_args=["-O3"])],
            compiler_directives={"language_level": 3, "embedsignature": True},
        )

setup(ext_modules=ext_modules)
