"""Exception types shared across the library.

Everything raised on an *expected* numerical failure path derives from
MplabError, so the experiment harness can record failures as result rows
instead of aborting a sweep. Programming errors (bad shapes, bad
arguments) raise the usual ValueError/TypeError.
"""


class MplabError(Exception):
    """Base class for expected numerical/ingestion failures."""


# -- dense factorizations ------------------------------------------------

class ExactZeroPivot(MplabError):
    """LU found a column that is exactly zero on and below the diagonal."""

    def __init__(self, column):
        super().__init__(f"exact zero pivot in column {column}")
        self.column = column


class OverflowInFactor(MplabError):
    """An infinity (or NaN from inf arithmetic) appeared in the factors."""


class NotPositiveDefinite(MplabError):
    """Cholesky hit a nonpositive or nonfinite pivot."""

    def __init__(self, index, pivot=None):
        super().__init__(f"nonpositive pivot at index {index} (pivot={pivot})")
        self.index = index
        self.pivot = pivot


class ZeroDiagonal(MplabError):
    """Triangular solve with a zero diagonal entry."""

    def __init__(self, index):
        super().__init__(f"zero diagonal at index {index}")
        self.index = index


class ZeroRowOrColumn(MplabError):
    """Equilibration requires every row and column to have a nonzero."""


class ZeroMatrix(MplabError):
    """Scaling a matrix whose largest magnitude is zero."""


class NonpositiveDiagonal(MplabError):
    """Diagonal scaling for Cholesky needs strictly positive a_ii."""

    def __init__(self, index):
        super().__init__(f"nonpositive diagonal entry at index {index}")
        self.index = index


class RetryCapExceeded(MplabError):
    """Shifted Cholesky kept failing after the maximum number of shift doublings."""

    def __init__(self, c_final):
        super().__init__(f"Cholesky still failing at shift multiplier c={c_final}")
        self.c_final = c_final


# -- refinement engines --------------------------------------------------

class FactorizationFailed(MplabError):
    """The low-precision factorization inside a refinement solver failed."""


class RankDeficient(MplabError):
    """Least-squares Cholesky retry cap hit; matrix treated as rank deficient."""


# -- quantized integer LU ------------------------------------------------

class Overflowed(MplabError):
    """An intermediate of the integer factorization left the int32 range."""

    def __init__(self, column):
        super().__init__(f"int32 overflow in trailing update at column {column}")
        self.column = column


class ZeroPivot(MplabError):
    """Integer factorization hit a zero pivot."""

    def __init__(self, column):
        super().__init__(f"zero integer pivot in column {column}")
        self.column = column


# -- eigensolvers ----------------------------------------------------------

class NoConvergence(MplabError):
    """Iteration cap reached without meeting the requested tolerance."""


class SingularB(MplabError):
    """The column-replaced eigenpair correction system is singular."""


# -- sparse / preconditioning ---------------------------------------------

class SingularBlock(MplabError):
    """A diagonal block could not be inverted (reported via fallback tag)."""


class NotConverged(MplabError):
    """Iterative solver did not reach its tolerance within maxit."""

    def __init__(self, iterations, res_history=None):
        super().__init__(f"no convergence after {iterations} iterations")
        self.iterations = iterations
        self.res_history = res_history


class IndefiniteDetected(MplabError):
    """CG detected p^T A p <= 0; the operator is not positive definite."""


# -- ingestion --------------------------------------------------------------

class ParseError(MplabError):
    """Malformed Matrix Market (or spec) file."""

    def __init__(self, message, line=None):
        loc = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{loc}")
        self.line = line


class UnsupportedField(MplabError):
    """Matrix Market field/symmetry this reader does not handle."""
