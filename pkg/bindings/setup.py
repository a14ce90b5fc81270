from pybind11.setup_helpers import Pybind11Extension, build_ext
from setuptools import setup

# -ffp-contract=off keeps the arithmetic bit-compatible with the pure Python
# implementation: no FMA contraction of multiply-add chains.
ext = Pybind11Extension(
    "stepshape_ext._core",
    ["src/stepshape_ext/_core.cpp"],
    cxx_std=17,
    extra_compile_args=["-O2", "-ffp-contract=off"],
)

setup(ext_modules=[ext], cmdclass={"build_ext": build_ext})
