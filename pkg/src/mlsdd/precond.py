"""Additive and hybrid multilevel Schwarz preconditioners.

The additive operator applies every subdomain correction of every level
plus the coarse solve to the (level-restricted, otherwise untouched)
residual: B = sum_{l,i} Q_l E_{l,i} A_{l,i}^{-1} E_{l,i}^T Q_l^T
+ Q_0 A_0^{-1} Q_0^T with composite prolongations Q_l; it is symmetric
positive definite and drives CG.  The hybrid variant sweeps levels
multiplicatively (restricted additive Schwarz within each level, one
descending correction pass, coarse solve, one ascending prolongation
pass) and is nonsymmetric, so it is used within GMRES.
"""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidSpec, SingularBlock
from .factor import DEFAULT_EPSILON, DEFAULT_TAU_ZERO, factor_semidef


@dataclass
class PreconditionerState:
    """Factorized subdomain and coarse blocks ready for apply()."""

    levels: list                      # SpectralLevel objects, finest .. 0
    mode: str
    omega: float
    block_dofs: list                  # per level: list of dof index arrays
    block_facts: list                 # per level: list of factorizations
    ras_weights: list                 # per level: PoU weights on block dofs
    coarse_fact: object
    factor_times: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.levels[0].n

    def apply(self, r):
        return apply_preconditioner(self, r)

    __call__ = apply


def build_preconditioner(levels, mode="additive", omega=1.0,
                         tau_zero=DEFAULT_TAU_ZERO, epsilon=DEFAULT_EPSILON):
    """Factor all subdomain Dirichlet blocks and the coarse matrix.

    Subdomain blocks live on the Dirichlet dofs (strictly interior dofs
    on the finest level, own coarse columns elsewhere) and must be SPD;
    a masked pivot there raises SingularBlock.  The coarse matrix may be
    rank-deficient through the generating-system construction, so its
    factorization keeps the masked-pivot handling.
    """
    if mode not in ("additive", "hybrid"):
        raise InvalidSpec(f"unknown preconditioner mode {mode!r}")
    block_dofs, block_facts, ras_w = [], [], []
    factor_times = {}
    for lv in levels[:-1]:
        dofs_l, facts_l, w_l = [], [], []
        times = []
        for i in range(lv.n_subdomains):
            mask = lv.interior[i]
            dofs = lv.dof_lists[i][mask]
            t0 = time.perf_counter()
            if len(dofs) == 0:
                warnings.warn(
                    f"level {lv.level} subdomain {i} has an empty local "
                    "space; skipping its correction", stacklevel=2)
                fact = None
            else:
                fact = factor_semidef(lv.a.submatrix(dofs),
                                      tau_zero=tau_zero, epsilon=epsilon)
                if fact.num_masked:
                    raise SingularBlock(
                        f"level {lv.level} subdomain {i}: local matrix "
                        f"singular ({fact.num_masked} zero pivots)",
                        level=lv.level, subdomain=i)
            times.append(time.perf_counter() - t0)
            dofs_l.append(dofs)
            facts_l.append(fact)
            w_l.append(lv.chi[i][mask])
        block_dofs.append(dofs_l)
        block_facts.append(facts_l)
        ras_w.append(w_l)
        factor_times[lv.level] = times
    t0 = time.perf_counter()
    coarse_fact = factor_semidef(levels[-1].a, tau_zero=tau_zero,
                                 epsilon=epsilon)
    factor_times[0] = [time.perf_counter() - t0]
    return PreconditionerState(levels=levels, mode=mode, omega=omega,
                               block_dofs=block_dofs, block_facts=block_facts,
                               ras_weights=ras_w, coarse_fact=coarse_fact,
                               factor_times=factor_times)


def _level_corrections(state, k, r, weighted):
    lv = state.levels[k]
    z = np.zeros(lv.n)
    for dofs, fact, w in zip(state.block_dofs[k], state.block_facts[k],
                             state.ras_weights[k]):
        if fact is None:
            continue
        loc = fact.solve(r[dofs])
        z[dofs] += w * loc if weighted else loc
    return z


def apply_preconditioner(state, r):
    """z = B r in the chosen mode (additive is linear symmetric SPD)."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape[0] != state.dim:
        raise DimensionMismatch("preconditioner applied to wrong length")
    levels = state.levels
    n_fine_levels = len(levels) - 1
    if state.mode == "additive":
        z_levels = []
        rl = r
        for k in range(n_fine_levels):
            z_levels.append(_level_corrections(state, k, rl, weighted=False))
            rl = levels[k + 1].p_to_parent.T @ rl
        acc = state.coarse_fact.solve(rl)
        for k in range(n_fine_levels - 1, -1, -1):
            acc = z_levels[k] + levels[k + 1].p_to_parent @ acc
        return state.omega * acc
    # hybrid: multiplicative over levels, RAS within each level
    z_levels = []
    rl = r
    for k in range(n_fine_levels):
        z = _level_corrections(state, k, rl, weighted=True)
        z_levels.append(z)
        rl = levels[k + 1].p_to_parent.T @ (rl - levels[k].a @ z)
    acc = state.coarse_fact.solve(rl)
    for k in range(n_fine_levels - 1, -1, -1):
        acc = z_levels[k] + levels[k + 1].p_to_parent @ acc
    return state.omega * acc


def stationary_iterate(a, state, b, omega=1.0, iters=10, x0=None):
    """Damped subspace-correction iteration x += omega * B (b - A x)."""
    x = np.zeros(a.dim) if x0 is None else np.array(x0, dtype=np.float64)
    history = []
    for _ in range(iters):
        r = b - a @ x
        history.append(np.linalg.norm(r))
        x = x + omega * apply_preconditioner(state, r)
    history.append(np.linalg.norm(b - a @ x))
    return x, np.array(history)


# -- condition number bounds ----------------------------------------------

@dataclass
class ConditionBoundReport:
    k0: int
    levels: int
    a0: float
    b0: float
    c1: float
    two_level_c0: float
    two_level_bound: float
    multilevel_c: float
    multilevel_bound: float
    measured_kappa: float | None = None
    satisfied: bool | None = None

    @property
    def applicable_bound(self):
        return (self.two_level_bound if self.levels == 1
                else self.multilevel_bound)

    def as_dict(self):
        return {
            "k0": self.k0, "levels": self.levels, "a0": self.a0,
            "b0": self.b0, "c1": self.c1,
            "two_level_bound": self.two_level_bound,
            "multilevel_bound": self.multilevel_bound,
            "measured_kappa": self.measured_kappa,
            "satisfied": self.satisfied,
        }


def condition_bound_report(k0, n_fine_levels, a0, b0, c1, measured=None,
                           enforce=False):
    """Theoretical condition bounds from the splitting constants.

    Two-level: kappa <= (2 + b0 c1 (1 + 2 a0)) (1 + k0 L); multilevel:
    kappa <= C^L (1 + b0 c1 / (C - 1)) (1 + k0 L) with
    C = 2 (1 + a0 b0 c1).  With ``enforce`` a measured kappa above the
    applicable bound raises BoundViolated.
    """
    ll = n_fine_levels
    c0_two = 2.0 + b0 * c1 * (1.0 + 2.0 * a0)
    bound_two = c0_two * (1.0 + k0 * ll)
    c = 2.0 * (1.0 + a0 * b0 * c1)
    bound_ml = c ** ll * (1.0 + b0 * c1 / (c - 1.0)) * (1.0 + k0 * ll)
    rep = ConditionBoundReport(
        k0=int(k0), levels=int(ll), a0=float(a0), b0=float(b0), c1=float(c1),
        two_level_c0=c0_two, two_level_bound=bound_two, multilevel_c=c,
        multilevel_bound=bound_ml)
    if measured is not None:
        rep.measured_kappa = float(measured)
        rep.satisfied = bool(measured <= rep.applicable_bound * (1 + 1e-12))
        if enforce and not rep.satisfied:
            from .errors import BoundViolated
            raise BoundViolated(
                f"measured kappa {measured:.4g} exceeds bound "
                f"{rep.applicable_bound:.4g}")
    return rep


def dense_operator(apply_fn, n):
    """Materialize a linear operator column by column (test/oracle sizes)."""
    cols = [np.asarray(apply_fn(col)) for col in np.eye(n).T]
    return np.column_stack(cols)


def dense_kappa(a, state):
    """Exact spectral condition number of B A via the dense pencil
    A v = lambda B^{-1} v (oracle-quality, small problems only)."""
    from scipy.linalg import eigh
    n = a.dim
    bd = dense_operator(lambda v: apply_preconditioner(state, v), n)
    lam = eigh(a.to_dense(), np.linalg.inv(bd), eigvals_only=True)
    return float(lam[-1] / lam[0]), lam
