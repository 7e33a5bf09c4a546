"""Dense symmetric eigensolvers and Lanczos-based spectrum estimation."""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import DimensionMismatch, NoConvergence

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 40

try:
    from numba import njit as _njit
except ImportError:  # pragma: no cover
    _njit = None


@dataclass
class DenseSymEigResult:
    """Full spectrum of a dense symmetric matrix.

    eigenvalues are ascending, eigenvectors orthonormal columns;
    ``sweeps`` is set by the Jacobi backend only.
    """
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int | None = None


def _jacobi_sweeps(m, v, tol_abs, max_sweeps):
    n = m.shape[0]
    for sweep in range(1, max_sweeps + 1):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += 2.0 * m[p, q] * m[p, q]
        if np.sqrt(off) <= tol_abs:
            return sweep - 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = m[p, q]
                if apq == 0.0:
                    continue
                theta = 0.5 * (m[q, q] - m[p, p]) / apq
                t = np.sign(theta) / (abs(theta) + np.sqrt(1.0 + theta * theta))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rp = c * m[:, p] - s * m[:, q]
                rq = s * m[:, p] + c * m[:, q]
                m[:, p] = rp
                m[:, q] = rq
                rp = c * m[p, :] - s * m[q, :]
                rq = s * m[p, :] + c * m[q, :]
                m[p, :] = rp
                m[q, :] = rq
                m[p, q] = 0.0
                m[q, p] = 0.0
                vp = c * v[:, p] - s * v[:, q]
                vq = s * v[:, p] + c * v[:, q]
                v[:, p] = vp
                v[:, q] = vq
    return -1


if _njit is not None:
    _jacobi_sweeps_fast = _njit(cache=True)(_jacobi_sweeps)
else:  # pragma: no cover
    _jacobi_sweeps_fast = _jacobi_sweeps


def dense_sym_eig(m, backend="lapack", tol=JACOBI_TOL,
                  max_sweeps=JACOBI_MAX_SWEEPS):
    """Full ascending spectrum of a dense symmetric matrix.

    backend="lapack" uses numpy.linalg.eigh; backend="jacobi" runs cyclic
    Jacobi rotations until the off-diagonal Frobenius norm drops below
    ``tol * ||M||`` and raises NoConvergence past ``max_sweeps``.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch("dense_sym_eig needs a square matrix")
    if backend == "lapack":
        vals, vecs = np.linalg.eigh(m)
        return DenseSymEigResult(vals, vecs)
    if backend != "jacobi":
        raise ValueError(f"unknown backend {backend!r}")
    work = 0.5 * (m + m.T)
    n = work.shape[0]
    v = np.eye(n)
    norm = np.linalg.norm(work)
    if norm == 0.0 or n == 1:
        return DenseSymEigResult(np.diag(work).copy(), v, sweeps=0)
    sweeps = _jacobi_sweeps_fast(work, v, tol * norm, max_sweeps)
    if sweeps < 0:
        raise NoConvergence(
            f"Jacobi did not converge within {max_sweeps} sweeps",
            sweeps=max_sweeps)
    vals = np.diag(work).copy()
    order = np.argsort(vals, kind="stable")
    return DenseSymEigResult(vals[order], v[:, order], sweeps=sweeps)


def lanczos_extremal(apply_op, dim, iters=60, b_op=None, seed=0):
    """Ritz estimates of the extremal eigenvalues of a symmetric operator.

    With ``b_op`` given, the operator is M = b_op(apply_op(.)) which is
    self-adjoint in the inner product induced by b_op^{-1}; the recurrence
    then tracks vector pairs so no inverse is ever applied (this is how
    the condition number of the preconditioned operator is estimated).

    Returns (lambda_min_est, lambda_max_est, breakdown_flag).  A lucky
    breakdown returns the current estimates with the flag set.
    """
    if iters < 2:
        raise DimensionMismatch("lanczos_extremal needs iters >= 2")
    rng = np.random.default_rng(seed)
    alphas, betas = [], []
    breakdown = False
    if b_op is None:
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        basis = [v]
        v_prev = np.zeros(dim)
        beta = 0.0
        for _ in range(min(iters, dim)):
            w = np.asarray(apply_op(basis[-1]))
            alpha = basis[-1] @ w
            alphas.append(alpha)
            w = w - alpha * basis[-1] - beta * v_prev
            for u in basis:  # full reorthogonalization
                w -= (u @ w) * u
            beta = np.linalg.norm(w)
            if beta <= 1e-14 * max(1.0, abs(alpha)):
                breakdown = True
                break
            if len(alphas) == iters or len(basis) == dim:
                break
            betas.append(beta)
            v_prev = basis[-1]
            basis.append(w / beta)
    else:
        # Lanczos for A B in the B inner product (same spectrum as B A).
        # The dual vectors B u_k come from fresh operator applies, so the
        # primal/dual pairing stays exact instead of drifting.
        u = rng.standard_normal(dim)
        bu = np.asarray(b_op(u))
        nrm = np.sqrt(max(u @ bu, 0.0))
        us, bus = [u / nrm], [bu / nrm]
        u_prev = np.zeros(dim)
        beta = 0.0
        for _ in range(min(iters, dim)):
            t = np.asarray(apply_op(bus[-1]))   # (AB) u_k
            alpha = t @ bus[-1]
            alphas.append(alpha)
            w = t - alpha * us[-1] - beta * u_prev
            for uj, buj in zip(us, bus):
                w -= (buj @ w) * uj
            bw = np.asarray(b_op(w))
            beta = np.sqrt(max(w @ bw, 0.0))
            if beta <= 1e-14 * max(1.0, abs(alpha)):
                breakdown = True
                break
            if len(alphas) == iters or len(us) == dim:
                break
            betas.append(beta)
            u_prev = us[-1]
            us.append(w / beta)
            bus.append(bw / beta)
    if len(alphas) == 1:
        return alphas[0], alphas[0], breakdown
    vals = eigh_tridiagonal(np.array(alphas), np.array(betas[:len(alphas) - 1]),
                            eigvals_only=True)
    return vals[0], vals[-1], breakdown


def eigh_partial_largest(apply_op, dim, min_value=None, count=None,
                         tol=1e-9, seed=0, max_rounds=12, basis_cap=None):
    """All eigenpairs of a symmetric PSD operator above a value cutoff.

    Restarted Lanczos with full reorthogonalization; converged Ritz pairs
    above the cutoff are locked and deflated, and fresh restarts pick up
    remaining copies of multiple eigenvalues.  Either ``min_value``
    (collect every eigenvalue > min_value, plus the best available
    estimate just below it) or ``count`` (largest ``count``) must be set.

    Returns (values desc, vectors, next_value_estimate).
    """
    if (min_value is None) == (count is None):
        raise ValueError("specify exactly one of min_value / count")
    rng = np.random.default_rng(seed)
    locked_vals, locked_vecs = [], []
    below_best = None
    if basis_cap is None:
        basis_cap = min(dim, max(120, 3 * (count or 30)))

    def ortho_locked(w):
        for u in locked_vecs:
            w -= (u @ w) * u
        return w

    for _ in range(max_rounds):
        if len(locked_vals) >= dim or (count is not None
                                       and len(locked_vals) >= count):
            break
        v = ortho_locked(rng.standard_normal(dim))
        nrm = np.linalg.norm(v)
        if nrm == 0.0:  # pragma: no cover
            break
        basis = [v / nrm]
        alphas, betas = [], []
        v_prev = np.zeros(dim)
        beta = 0.0
        new_vals, new_vecs = [], []
        round_below = None
        cap = min(basis_cap, dim - len(locked_vals))
        exhausted = False
        while True:
            w = ortho_locked(np.asarray(apply_op(basis[-1])))
            alpha = basis[-1] @ w
            alphas.append(alpha)
            w = w - alpha * basis[-1] - beta * v_prev
            for u in basis:
                w -= (u @ w) * u
            beta = np.linalg.norm(w)
            k = len(alphas)
            done = beta <= 1e-13 or k >= cap
            if done or k % 10 == 0:
                theta, s = eigh_tridiagonal(np.array(alphas),
                                            np.array(betas))
                res = np.abs(beta * s[-1, :])
                scale = max(abs(theta[-1]), 1e-30)
                conv = res <= tol * scale
                if min_value is not None:
                    above = theta > min_value
                    settled = bool(conv[above].all()) and (
                        bool((~above).any()) or done)
                else:
                    want = min(count - len(locked_vals), k)
                    settled = conv[-want:].all() if want > 0 else True
                if settled or done:
                    if min_value is not None:
                        under = theta[theta <= min_value]
                        if len(under):
                            est = float(under.max())
                            if round_below is None or est > round_below:
                                round_below = est
                    sel = np.where(conv)[0]
                    for idx in sel[::-1]:
                        val = theta[idx]
                        vec = np.zeros(dim)
                        for j, u in enumerate(basis):
                            vec += s[j, idx] * u
                        if min_value is not None and val <= min_value:
                            if round_below is None or val > round_below:
                                round_below = val
                            continue
                        if count is not None and \
                                len(locked_vals) + len(new_vals) >= count:
                            if round_below is None or val > round_below:
                                round_below = val
                            continue
                        new_vals.append(val)
                        new_vecs.append(vec)
                    exhausted = beta <= 1e-13 or k >= cap
                    break
            betas.append(beta)
            v_prev = basis[-1]
            basis.append(w / beta)
        if round_below is not None and (below_best is None
                                        or round_below > below_best):
            below_best = round_below
        if not new_vals:
            if exhausted or min_value is not None:
                break
            continue
        for val, vec in zip(new_vals, new_vecs):
            vec = ortho_locked(vec)
            nrm = np.linalg.norm(vec)
            if nrm < 1e-8:
                continue
            locked_vals.append(val)
            locked_vecs.append(vec / nrm)
    order = np.argsort(locked_vals)[::-1]
    vals = np.array([locked_vals[i] for i in order])
    vecs = (np.column_stack([locked_vecs[i] for i in order])
            if len(order) else np.zeros((dim, 0)))
    return vals, vecs, below_best
