"""Preconditioned conjugate gradients and GMRES with spectrum estimates."""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import DimensionMismatch

DEFAULT_TOL = 1e-8
DEFAULT_MAXIT = 500
DEFAULT_RESTART = 200


@dataclass
class KrylovReport:
    """Iteration record: counts, residuals, condition estimate, timings."""

    method: str
    iterations: int
    converged: bool
    relative_residual: float
    residual_history: np.ndarray
    kappa_estimate: float | None = None
    lambda_min_estimate: float | None = None
    lambda_max_estimate: float | None = None
    timings: dict = field(default_factory=dict)
    subdomain_times: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "method": self.method,
            "iterations": self.iterations,
            "converged": self.converged,
            "relative_residual": self.relative_residual,
            "kappa_estimate": self.kappa_estimate,
            "lambda_min_estimate": self.lambda_min_estimate,
            "lambda_max_estimate": self.lambda_max_estimate,
            "timings": self.timings,
        }


def _as_op(op):
    if op is None:
        return lambda x: x
    if callable(op):
        return op
    return lambda x: op @ x


def _cg_spectrum(alphas, betas):
    """Extremal Ritz values of B A from the CG coefficients (the implicit
    Lanczos tridiagonal: free byproduct of the iteration)."""
    k = len(alphas)
    if k == 0:
        return None, None
    d = np.empty(k)
    e = np.empty(max(k - 1, 0))
    d[0] = 1.0 / alphas[0]
    for j in range(1, k):
        d[j] = 1.0 / alphas[j] + betas[j - 1] / alphas[j - 1]
        e[j - 1] = np.sqrt(max(betas[j - 1], 0.0)) / alphas[j - 1]
    if k == 1:
        return d[0], d[0]
    vals = eigh_tridiagonal(d, e, eigvals_only=True)
    return float(vals[0]), float(vals[-1])


def pcg(a, b_op, rhs, tol=DEFAULT_TOL, maxit=DEFAULT_MAXIT, x0=None):
    """Preconditioned CG; stops when ||b - A x|| < tol ||b - A x0||.

    Returns (x, KrylovReport); the condition number of B A is estimated
    from the CG Lanczos connection.  Hitting ``maxit`` is reported, not
    raised (best iterate comes back with converged=False).
    """
    apply_a, apply_b = _as_op(a), _as_op(b_op)
    rhs = np.asarray(rhs, dtype=np.float64)
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != rhs.shape:
        raise DimensionMismatch("x0/rhs shapes differ")
    r = rhs - apply_a(x) if x.any() else rhs.copy()
    norm0 = np.linalg.norm(r)
    history = [norm0]
    if norm0 == 0.0:
        return x, KrylovReport("pcg", 0, True, 0.0, np.array(history))
    z = apply_b(r)
    p = z.copy()
    rz = r @ z
    alphas, betas = [], []
    converged = False
    it = 0
    for it in range(1, maxit + 1):
        ap = apply_a(p)
        alpha = rz / (p @ ap)
        alphas.append(alpha)
        x = x + alpha * p
        r = r - alpha * ap
        nr = np.linalg.norm(r)
        history.append(nr)
        if nr < tol * norm0:
            true_r = rhs - apply_a(x)
            nr_true = np.linalg.norm(true_r)
            history[-1] = nr_true
            if nr_true < tol * norm0:
                converged = True
                break
            r = true_r
        z = apply_b(r)
        rz_new = r @ z
        beta = rz_new / rz
        betas.append(beta)
        p = z + beta * p
        rz = rz_new
    lmin, lmax = _cg_spectrum(alphas, betas)
    kappa = (lmax / lmin) if lmin and lmin > 0 else None
    if not converged:
        warnings.warn(f"pcg: no convergence within {maxit} iterations",
                      stacklevel=2)
    return x, KrylovReport("pcg", it, converged, history[-1] / norm0,
                           np.array(history), kappa_estimate=kappa,
                           lambda_min_estimate=lmin,
                           lambda_max_estimate=lmax)


def gmres(a, b_op, rhs, tol=DEFAULT_TOL, maxit=DEFAULT_MAXIT,
          restart=DEFAULT_RESTART, x0=None):
    """Left-preconditioned restarted GMRES.

    The Arnoldi recurrence monitors the preconditioned residual; on a
    convergence claim the unpreconditioned residual is checked against
    ``tol * ||b - A x0||`` so the stopping rule matches PCG's.
    """
    apply_a, apply_b = _as_op(a), _as_op(b_op)
    rhs = np.asarray(rhs, dtype=np.float64)
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=np.float64)
    r = rhs - apply_a(x) if x.any() else rhs.copy()
    norm0 = np.linalg.norm(r)
    history = [norm0]
    if norm0 == 0.0:
        return x, KrylovReport("gmres", 0, True, 0.0, np.array(history))
    prec_norm0 = np.linalg.norm(apply_b(r))
    trigger = 0.5 * tol  # preconditioned-residual level that prompts a check
    total_it = 0
    converged = False
    while total_it < maxit and not converged:
        r = rhs - apply_a(x)
        z = apply_b(r)
        beta = np.linalg.norm(z)
        if beta <= 1e-300:
            converged = np.linalg.norm(r) < tol * norm0
            break
        v = [z / beta]
        h = np.zeros((restart + 1, restart))
        g = np.zeros(restart + 1)
        g[0] = beta
        cs = np.zeros(restart)
        sn = np.zeros(restart)
        for k in range(restart):
            total_it += 1
            w = apply_b(apply_a(v[k]))
            for j in range(k + 1):
                h[j, k] = v[j] @ w
                w = w - h[j, k] * v[j]
            hk1 = np.linalg.norm(w)
            h[k + 1, k] = hk1
            if hk1 > 0.0:
                v.append(w / hk1)
            for j in range(k):
                t = cs[j] * h[j, k] + sn[j] * h[j + 1, k]
                h[j + 1, k] = -sn[j] * h[j, k] + cs[j] * h[j + 1, k]
                h[j, k] = t
            denom = np.hypot(h[k, k], h[k + 1, k])
            cs[k] = h[k, k] / denom if denom else 1.0
            sn[k] = h[k + 1, k] / denom if denom else 0.0
            h[k, k] = denom
            h[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            prec_res = abs(g[k + 1])
            history.append(prec_res)
            last = (hk1 == 0.0 or k == restart - 1 or total_it >= maxit)
            if prec_res <= trigger * prec_norm0 or last:
                y = np.linalg.solve(h[:k + 1, :k + 1], g[:k + 1])
                cand = x + np.column_stack(v[:k + 1]) @ y
                true_res = np.linalg.norm(rhs - apply_a(cand))
                if true_res < tol * norm0:
                    x = cand
                    converged = True
                    history[-1] = true_res
                    break
                if last:
                    x = cand
                    break
                trigger *= 0.1  # keep iterating, check again deeper
    if not converged:
        warnings.warn(f"gmres: no convergence within {maxit} iterations",
                      stacklevel=2)
    final = np.linalg.norm(rhs - apply_a(x))
    return x, KrylovReport("gmres", total_it, converged, final / norm0,
                           np.array(history))
