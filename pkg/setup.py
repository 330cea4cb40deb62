import os

from setuptools import Extension, setup


def extensions():
    if os.environ.get("RISGNN_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "risgnn._wmmse_ext",
        ["src/risgnn/_wmmse_ext.pyx"],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions())
