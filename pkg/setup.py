"""Build script for the optional compiled kernels.

The extension is optional: when Cython or a C compiler is unavailable the
package installs without it and ``macensemble.kernel`` falls back to the
numpy implementation, which produces bit-identical results.
"""
import os
import sys

from setuptools import setup

ext_modules = []
compile_args = ["-O3", "-ffp-contract=off"]
if os.environ.get("MACENSEMBLE_PORTABLE") != "1":
    compile_args.append("-march=native")
if os.environ.get("MACENSEMBLE_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "macensemble._kernels",
                    ["src/macensemble/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no FMA contraction: keeps results bit-identical to the numpy path
                    extra_compile_args=compile_args,
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except Exception as exc:  # pragma: no cover - build environment dependent
        print(f"warning: building without compiled kernels ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
