"""Symmetric semi-definite LDL^T factorization with pivot regularization.

Subdomain Neumann matrices are only positive semi-definite (floating
subdomains carry the constants, coarse generating systems are linearly
dependent).  We factor P A P^T = L D L^T with diagonal pivoting after a
reverse Cuthill-McKee reordering, mask pivots that are zero relative to
the diagonal scale, and keep a regularized diagonal D_eps in which
masked pivots are replaced by ``epsilon * max|diag|``.  Solving with
D_eps instead of D is what makes the spectral transformation of the
per-subdomain eigenproblems well defined when ker(A) is nontrivial.

The numeric kernel works on the band profile left after RCM (dense
blocked elimination when the band is not worth exploiting).
"""

import numpy as np
from scipy.linalg import solve_triangular
from scipy.linalg.lapack import dtbtrs

from .errors import DimensionMismatch, NegativePivot
from .sparse import SparseSymMatrix

DEFAULT_TAU_ZERO = 1e-12
DEFAULT_EPSILON = 1e-8

try:  # optional speedup for the banded elimination loop
    from numba import njit as _njit
except ImportError:  # pragma: no cover - numba is normally available
    _njit = None


def reverse_cuthill_mckee(a):
    """Reverse Cuthill-McKee ordering of the sparsity graph of ``a``.

    Deterministic: each component starts from its minimum-degree vertex
    (ties by index) and neighbors are visited in ascending (degree, index)
    order.
    """
    n = a.dim
    indptr, indices = a.row_offsets, a.col_indices
    degree = np.diff(indptr)
    visited = np.zeros(n, dtype=bool)
    order = np.empty(n, dtype=np.int64)
    pos = 0
    key = np.argsort(degree, kind="stable")
    for start in key:
        if visited[start]:
            continue
        visited[start] = True
        order[pos] = start
        head, pos = pos, pos + 1
        while head < pos:
            u = order[head]
            head += 1
            nbrs = indices[indptr[u]:indptr[u + 1]]
            nbrs = nbrs[~visited[nbrs]]
            if len(nbrs):
                nbrs = nbrs[np.lexsort((nbrs, degree[nbrs]))]
                visited[nbrs] = True
                order[pos:pos + len(nbrs)] = nbrs
                pos += len(nbrs)
    return order[::-1].copy()


def _band_ldl_py(band, w_arr, tau_abs):
    """In-place banded LDL^T; returns (d, status). status>=0 flags a
    negative pivot at that index, -1 means clean."""
    kd1, n = band.shape
    d = np.zeros(n)
    for k in range(n):
        piv = band[0, k]
        w = w_arr[k]
        if abs(piv) <= tau_abs:
            d[k] = 0.0
            band[1:, k] = 0.0
            continue
        if piv < 0.0:
            return d, k
        d[k] = piv
        if w == 0:
            continue
        col = band[1:1 + w, k] / piv
        band[1:1 + w, k] = col
        dl = piv * col
        for r in range(w):
            band[r, k + 1:k + 1 + w - r] -= dl[r:w] * col[:w - r]
    return d, -1


if _njit is not None:
    _band_ldl_fast = _njit(cache=True)(_band_ldl_py)
else:  # pragma: no cover
    _band_ldl_fast = _band_ldl_py


def _dense_ldl(w, tau_abs, panel=64):
    """Blocked dense LDL^T with diagonal pivots and masking."""
    n = w.shape[0]
    d = np.zeros(n)
    for k0 in range(0, n, panel):
        k1 = min(k0 + panel, n)
        for k in range(k0, k1):
            piv = w[k, k]
            if abs(piv) <= tau_abs:
                d[k] = 0.0
                w[k + 1:, k] = 0.0
                continue
            if piv < 0.0:
                raise NegativePivot(
                    f"pivot {piv:.3e} at index {k} below -tau; matrix not PSD")
            d[k] = piv
            col = w[k + 1:, k] / piv
            w[k + 1:, k] = col
            if k + 1 < k1:
                w[k + 1:, k + 1:k1] -= np.outer(piv * col, col[:k1 - k - 1])
        if k1 < n:
            lp = w[k1:, k0:k1]
            w[k1:, k1:] -= (lp * d[k0:k1]) @ lp.T
    return d


class SemiDefFactorization:
    """P A P^T = L D L^T with masked / regularized pivots.

    Attributes
    ----------
    permutation : (n,) int array, the RCM ordering (permuted index i maps
        to original index permutation[i]).
    d : raw pivot values (masked positions hold 0).
    d_eps : regularized pivots (masked positions hold epsilon*max|diag|).
    zero_pivot_mask : bool array flagging masked pivots.
    """

    def __init__(self, permutation, band, dense_l, d, d_eps, mask,
                 tau_zero, epsilon):
        self.permutation = permutation
        self._band = band            # (bw+1, n) unit-lower band of L, or None
        self._dense_l = dense_l      # dense unit-lower L, or None
        self.d = d
        self.d_eps = d_eps
        self.zero_pivot_mask = mask
        self.tau_zero = tau_zero
        self.epsilon = epsilon
        self._iperm = np.argsort(permutation)

    @property
    def dim(self):
        return len(self.d)

    @property
    def num_masked(self):
        return int(self.zero_pivot_mask.sum())

    @property
    def bandwidth(self):
        return self._band.shape[0] - 1 if self._band is not None else None

    def solve_lower(self, b, transpose=False):
        """Apply L^{-1} (or L^{-T}) to a vector/matrix in permuted order."""
        b = np.asarray(b, dtype=np.float64)
        squeeze = b.ndim == 1
        rhs = b[:, None] if squeeze else b
        if rhs.shape[0] != self.dim:
            raise DimensionMismatch("solve_lower: wrong leading dimension")
        if self._band is not None:
            x, info = dtbtrs(self._band, np.asfortranarray(rhs), uplo="L",
                             trans="T" if transpose else "N", diag="U")
            if info != 0:  # pragma: no cover
                raise NegativePivot(f"dtbtrs failed with info={info}")
        else:
            x = solve_triangular(self._dense_l, rhs, lower=True,
                                 trans="T" if transpose else "N",
                                 unit_diagonal=True)
        return x[:, 0] if squeeze else x

    def solve(self, b):
        """Solve P L D_eps L^T P^T x = b (the regularized full solve)."""
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.dim:
            raise DimensionMismatch(
                f"rhs of length {b.shape[0]} against dim {self.dim}")
        y = b[self.permutation] if b.ndim == 1 else b[self.permutation, :]
        y = self.solve_lower(y)
        y = y / self.d_eps if y.ndim == 1 else y / self.d_eps[:, None]
        y = self.solve_lower(y, transpose=True)
        return y[self._iperm] if y.ndim == 1 else y[self._iperm, :]


def factor_semidef(a, tau_zero=DEFAULT_TAU_ZERO, epsilon=DEFAULT_EPSILON,
                   band_fill_limit=1 / 3):
    """Factor a symmetric PSD SparseSymMatrix, masking zero pivots.

    Pivots with |d| <= tau_zero * max|diag(A)| are masked (their L column
    is zeroed) and replaced by epsilon * max|diag(A)| in ``d_eps``.  An
    unmasked pivot below -tau_zero * max|diag(A)| raises NegativePivot.

    The permuted matrix is eliminated inside its band profile when the
    bandwidth is below ``band_fill_limit * n``, else with a blocked dense
    kernel.
    """
    if not isinstance(a, SparseSymMatrix):
        a = SparseSymMatrix.from_dense(np.asarray(a))
    n = a.dim
    perm = reverse_cuthill_mckee(a)
    iperm = np.argsort(perm)
    maxdiag = np.abs(a.diagonal()).max()
    if maxdiag == 0.0:
        maxdiag = 1.0
    tau_abs = tau_zero * maxdiag
    eps_abs = epsilon * maxdiag

    # bandwidth of the permuted pattern
    rows = np.repeat(np.arange(n), np.diff(a.row_offsets))
    pr, pc = iperm[rows], iperm[a.col_indices]
    bw = int(np.abs(pr - pc).max()) if a.nnz else 0

    if n > 1 and bw + 1 <= max(2, band_fill_limit * n):
        band = np.zeros((bw + 1, n))
        lower = pr >= pc
        band[pr[lower] - pc[lower], pc[lower]] = a.values[lower]
        w_arr = np.minimum(bw, n - 1 - np.arange(n)).astype(np.int64)
        d, bad = _band_ldl_fast(band, w_arr, tau_abs)
        if bad >= 0:
            raise NegativePivot(
                f"pivot {band[0, bad]:.3e} at index {bad} below -tau; "
                "matrix not PSD")
        band[0, :] = 1.0
        dense_l = None
    else:
        w = a.to_dense()[np.ix_(perm, perm)]
        d = _dense_ldl(w, tau_abs)
        dense_l = np.tril(w, -1)
        np.fill_diagonal(dense_l, 1.0)
        band = None

    mask = d == 0.0
    d_eps = d.copy()
    d_eps[mask] = eps_abs
    return SemiDefFactorization(perm, band, dense_l, d, d_eps, mask,
                                tau_zero, epsilon)


def solve_factored(f, b):
    """Functional wrapper around ``SemiDefFactorization.solve``."""
    return f.solve(b)
