"""Multiprecision numerical linear algebra laboratory.

Emulated low-precision floating point (prec), dense kernels with
scaling/shifting preparation (dense), iterative refinement and GMRES
engines (refine), quantized integer LU (qilu), symmetric eigenpair
refinement (eig), sparse kernels with clustered compression and an
adaptive block-Jacobi preconditioner (sparse), plus generators, Matrix
Market I/O and the ``mplab`` experiment harness.
"""

from .prec import FP16, BF16, FP32, FP64, Format, make_rng, round_array, round_value, rounded_op

__version__ = "0.1.0"

__all__ = [
    "FP16",
    "BF16",
    "FP32",
    "FP64",
    "Format",
    "make_rng",
    "round_array",
    "round_value",
    "rounded_op",
    "__version__",
]
