"""Multilevel spectral domain decomposition solver toolkit."""

from .sparse import SparseSymMatrix
from .factor import factor_semidef, solve_factored, SemiDefFactorization
from .eig import dense_sym_eig, lanczos_extremal, DenseSymEigResult

__version__ = "0.1.0"

__all__ = [
    "SparseSymMatrix",
    "SemiDefFactorization",
    "DenseSymEigResult",
    "factor_semidef",
    "solve_factored",
    "dense_sym_eig",
    "lanczos_extremal",
]
