"""Compressed sparse symmetric matrices.

The whole pipeline traffics in symmetric matrices: global stiffness
matrices, patch matrices, subdomain Neumann matrices and GEVP pencils.
``SparseSymMatrix`` stores the full symmetric pattern (both triangles)
in CSR form, with an explicit entry on every diagonal position, and is
immutable after construction.
"""

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, InvalidSpec

SYM_RTOL = 1e-13


class SparseSymMatrix:
    """Symmetric sparse matrix in CSR storage with both triangles stored.

    Parameters
    ----------
    csr : scipy.sparse.csr_matrix
        Square matrix holding the full symmetric pattern.
    validate : bool
        Check structural and numerical symmetry plus diagonal presence.
    """

    __slots__ = ("_csr",)

    def __init__(self, csr, validate=True):
        csr = sp.csr_matrix(csr)
        if csr.shape[0] != csr.shape[1]:
            raise DimensionMismatch(f"matrix must be square, got {csr.shape}")
        csr.sum_duplicates()
        csr.sort_indices()
        self._csr = csr
        if validate:
            self.validate()

    # -- constructors -------------------------------------------------

    @classmethod
    def from_coo(cls, dim, rows, cols, values, validate=True):
        """Accumulate COO triplets; duplicate entries are summed.

        Missing diagonal positions are inserted as explicit zeros so the
        "diagonal present on every row" invariant always holds.
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        diag = np.arange(dim, dtype=np.int64)
        rows = np.concatenate([rows, diag])
        cols = np.concatenate([cols, diag])
        values = np.concatenate([values, np.zeros(dim)])
        coo = sp.coo_matrix((values, (rows, cols)), shape=(dim, dim))
        return cls(coo.tocsr(), validate=validate)

    @classmethod
    def from_dense(cls, dense, drop_tol=0.0, validate=True):
        dense = np.asarray(dense, dtype=np.float64)
        keep = np.abs(dense) > drop_tol
        np.fill_diagonal(keep, True)
        rows, cols = np.nonzero(keep)
        return cls.from_coo(dense.shape[0], rows, cols, dense[rows, cols],
                            validate=validate)

    @classmethod
    def identity(cls, dim):
        return cls(sp.identity(dim, format="csr"), validate=False)

    # -- contract fields ----------------------------------------------

    @property
    def dim(self):
        return self._csr.shape[0]

    @property
    def row_offsets(self):
        return self._csr.indptr

    @property
    def col_indices(self):
        return self._csr.indices

    @property
    def values(self):
        return self._csr.data

    @property
    def nnz(self):
        return self._csr.nnz

    @property
    def csr(self):
        """Underlying scipy CSR matrix (treat as read-only)."""
        return self._csr

    # -- operations ---------------------------------------------------

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.dim:
            raise DimensionMismatch(
                f"matvec: vector of length {x.shape[0]} against dim {self.dim}")
        return self._csr @ x

    def __matmul__(self, x):
        return self.matvec(x)

    def to_dense(self):
        return self._csr.toarray()

    def diagonal(self):
        return self._csr.diagonal()

    def submatrix(self, idx):
        """Principal submatrix on the (sorted, unique) index list ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        sub = self._csr[idx][:, idx].tocsr()
        # re-normalize so the diagonal is explicitly present
        sub = sub + sp.csr_matrix(
            (np.zeros(len(idx)), (np.arange(len(idx)), np.arange(len(idx)))),
            shape=sub.shape)
        return SparseSymMatrix(sub, validate=False)

    def scaled(self, w):
        """Return diag(w) @ A @ diag(w); used for PoU-weighted forms."""
        w = np.asarray(w, dtype=np.float64)
        if w.shape[0] != self.dim:
            raise DimensionMismatch("scaling vector has wrong length")
        d = sp.diags(w)
        return SparseSymMatrix((d @ self._csr @ d).tocsr(), validate=False)

    def __add__(self, other):
        if isinstance(other, SparseSymMatrix):
            other = other._csr
        return SparseSymMatrix((self._csr + other).tocsr(), validate=False)

    def __mul__(self, scalar):
        return SparseSymMatrix(self._csr * float(scalar), validate=False)

    __rmul__ = __mul__

    def max_abs(self):
        return np.abs(self._csr.data).max() if self.nnz else 0.0

    def validate(self, rtol=SYM_RTOL):
        """Assert structural symmetry, numerical symmetry and diagonal presence."""
        csr = self._csr
        n = csr.shape[0]
        counts = np.diff(csr.indptr)
        has_diag = np.zeros(n, dtype=bool)
        rows = np.repeat(np.arange(n), counts)
        has_diag[rows[rows == csr.indices]] = True
        if not has_diag.all():
            raise InvalidSpec("diagonal entry missing on some row")
        t = csr.T.tocsr()
        t.sort_indices()
        if not (np.array_equal(t.indptr, csr.indptr)
                and np.array_equal(t.indices, csr.indices)):
            raise InvalidSpec("sparsity pattern is not structurally symmetric")
        scale = np.abs(csr.data).max() if csr.nnz else 1.0
        if scale == 0.0:
            return
        err = np.abs(t.data - csr.data).max()
        if err > rtol * scale:
            raise InvalidSpec(
                f"matrix not numerically symmetric: rel err {err / scale:.3e}")

    def __repr__(self):
        return f"SparseSymMatrix(dim={self.dim}, nnz={self.nnz})"


def sparse_sum(matrices, dim=None):
    """Sum an iterable of SparseSymMatrix (empty sum needs ``dim``)."""
    acc = None
    for m in matrices:
        acc = m.csr.copy() if acc is None else acc + m.csr
    if acc is None:
        if dim is None:
            raise InvalidSpec("empty sum without dimension")
        return SparseSymMatrix(sp.csr_matrix((dim, dim)), validate=False)
    return SparseSymMatrix(acc.tocsr(), validate=False)


def galerkin_project(a, p):
    """Triple product P^T A P, symmetrized against round-off.

    ``p`` is a scipy sparse (n x m) prolongation; ``a`` a SparseSymMatrix.
    """
    m = (p.T @ (a.csr @ p)).tocsr()
    m = (m + m.T) * 0.5
    m = m.tocsr()
    k = m.shape[0]
    m = m + sp.csr_matrix((np.zeros(k), (np.arange(k), np.arange(k))),
                          shape=m.shape)
    return SparseSymMatrix(m.tocsr(), validate=False)


def save_matrix_market(path, a, comment=""):
    """Write a SparseSymMatrix in Matrix Market coordinate symmetric format."""
    sp_io = __import__("scipy.io", fromlist=["mmwrite"])
    sp_io.mmwrite(str(path), sp.coo_matrix(a.csr), comment=comment,
                  symmetry="symmetric")


def load_matrix_market(path):
    """Read a Matrix Market file back into a SparseSymMatrix."""
    sp_io = __import__("scipy.io", fromlist=["mmread"])
    m = sp_io.mmread(str(path)).tocoo()
    return SparseSymMatrix.from_coo(m.shape[0], m.row, m.col, m.data)
