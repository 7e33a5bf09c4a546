"""Per-subdomain generalized eigenproblems and spectral coarse spaces.

Every level carries its matrix, its membership-keyed patch matrices and
per-subdomain dof lists with partition-of-unity weights.  A subdomain
pencil (A_i, B_i) is assembled purely from patches:

  A_i = sum of volume patches containing i (+ skeleton patches interior
        to i), restricted to the subdomain dofs;
  B_i = chi^T M chi with M = A_i (alpha 1), the overlap-ring part of A_i
        (alpha 2) or A_i with chi replaced by I - chi (alpha 3).

The pencil is solved through the regularized factorization transform:
factor A_i = L D L^T with masked zero pivots, replace them by eps in
D_eps, and compute the largest eigenvalues mu of the symmetric operator
D_eps^{-1/2} L^{-1} B L^{-T} D_eps^{-1/2}.  Then lambda = 1/mu; mu = 0
catches ker(B) including spurious generating-system directions, while
kernel-of-A modes surface at mu of order 1/eps and are kept.

On coarse levels the dofs are the coarse basis functions themselves;
a subdomain's generating system consists of its own columns plus the
restrictions of neighbouring columns whose support intersects it, and
the PoU becomes the own-column indicator.
"""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import (DimensionMismatch, EmptyCoarseSpace, EmptySubdomain,
                     InvalidSpec)
from .eig import dense_sym_eig, eigh_partial_largest
from .factor import DEFAULT_EPSILON, DEFAULT_TAU_ZERO, factor_semidef
from .sparse import SparseSymMatrix, galerkin_project, sparse_sum

DEFAULT_ETA = 0.3
DEFAULT_DENSE_CUTOFF = 2500
ORTHO_DROP_TOL = 1e-10


@dataclass
class SelectionRule:
    """Eigenpair selection: threshold mode keeps lambda < eta, fixed mode
    keeps the ``n_ev`` smallest lambdas."""

    mode: str  # "eta" | "nev"
    value: float

    @classmethod
    def threshold(cls, eta=DEFAULT_ETA):
        return cls("eta", float(eta))

    @classmethod
    def fixed(cls, n_ev):
        return cls("nev", int(n_ev))


@dataclass
class SubdomainPencil:
    level: int
    subdomain: int
    a: SparseSymMatrix
    b: SparseSymMatrix
    dofs: np.ndarray
    chi: np.ndarray
    alpha: int
    ring_mask: np.ndarray = None  # dofs touched by the overlap ring


@dataclass
class SelectedEigenpairs:
    level: int
    subdomain: int
    eigenvalues: np.ndarray      # selected, ascending
    vectors: np.ndarray          # (n_i, m) B-orthonormal columns
    rule: SelectionRule
    next_eigenvalue: float | None
    spectrum: np.ndarray         # all computed finite eigenvalues, ascending
    n_kernel: int                # masked pivots of A_i

    @property
    def m(self):
        return self.vectors.shape[1]


@dataclass
class SpectralLevel:
    """One level of the spectral hierarchy (level L = finest, 0 = coarsest)."""

    level: int
    n: int
    a: SparseSymMatrix
    patches: object                  # PatchMatrixSet-compatible or None
    dof_lists: list
    chi: list
    interior: list                   # Dirichlet-subspace mask per subdomain
    own: list                        # own-dof mask (all True on level L)
    p_to_parent: sp.csr_matrix = None    # columns in parent coefficients
    dof_gen_subdomain: np.ndarray = None  # coarse levels: generating subdomain
    eigen: list = field(default=None, repr=False)

    @property
    def n_subdomains(self):
        return len(self.dof_lists)


# -- pencil assembly ------------------------------------------------------

def _neumann_matrix(level, i, ring_only=False):
    """Patch sum of the subdomain Neumann form (optionally only its
    overlap-ring part: multiply-owned patches, crossing faces, plus the
    subdomain's own Dirichlet-face terms)."""
    mats = []
    for key, m in level.patches.volume.items():
        if i in key and (not ring_only or len(key) >= 2):
            mats.append(m)
    for (km, kp), m in level.patches.skeleton.items():
        if i in km and i in kp:
            mats.append(m)
    if ring_only:
        singly = (i,)
        if singly in level.patches.dirichlet:
            mats.append(level.patches.dirichlet[singly])
    return sparse_sum(mats, dim=level.n)


def assemble_pencil(level, i, alpha):
    """Neumann matrix and right-hand-side matrix of subdomain ``i``."""
    if alpha not in (1, 2, 3):
        raise InvalidSpec(f"alpha must be 1, 2 or 3, got {alpha}")
    dofs = level.dof_lists[i]
    if len(dofs) == 0:
        raise EmptySubdomain(f"level {level.level} subdomain {i} has no dofs")
    a_sub = _neumann_matrix(level, i).submatrix(dofs)
    chi = level.chi[i]
    ring_mask = None
    if alpha == 2:
        ring = _neumann_matrix(level, i, ring_only=True).submatrix(dofs)
        absrow = ring.csr.copy()
        absrow.data = np.abs(absrow.data)
        ring_mask = (absrow @ np.ones(ring.dim)) > 0.0
        b_sub = ring.scaled(chi)
    elif alpha == 1:
        b_sub = a_sub.scaled(chi)
    else:
        b_sub = a_sub.scaled(1.0 - chi)
    return SubdomainPencil(level=level.level, subdomain=i, a=a_sub, b=b_sub,
                           dofs=dofs, chi=chi, alpha=alpha,
                           ring_mask=ring_mask)


def pencil_from_generating(abar, bbar, gen):
    """Pencil over an explicit generating system ``gen`` (columns).

    Useful for experiments with linearly dependent generating systems;
    duplicated columns produce ker A cap ker B directions that the
    regularized transform must reject.
    """
    g = np.asarray(gen, dtype=np.float64)
    a = SparseSymMatrix.from_dense(g.T @ (abar.csr @ g))
    b = SparseSymMatrix.from_dense(g.T @ (bbar.csr @ g))
    return SubdomainPencil(level=-1, subdomain=-1, a=a, b=b,
                           dofs=np.arange(g.shape[1]), chi=np.ones(g.shape[1]),
                           alpha=1)


# -- pencil solve ---------------------------------------------------------

def _b_orthonormalize(vectors, lams, b_csr, drop_tol=ORTHO_DROP_TOL):
    """Modified Gram-Schmidt in the B inner product with re-orthogonalization;
    near-dependent vectors (from generating systems) are dropped."""
    kept_v, kept_bv, kept_l = [], [], []
    for k in range(vectors.shape[1]):
        v = vectors[:, k].copy()
        bv = b_csr @ v
        ref = np.sqrt(max(v @ bv, 0.0))
        if ref == 0.0:
            continue
        for _ in range(2):
            for q, bq in zip(kept_v, kept_bv):
                v -= (bq @ v) * q
            bv = b_csr @ v
        nrm = np.sqrt(max(v @ bv, 0.0))
        if nrm <= drop_tol * ref:
            continue
        kept_v.append(v / nrm)
        kept_bv.append(bv / nrm)
        kept_l.append(lams[k])
    if kept_v:
        return np.column_stack(kept_v), np.array(kept_l)
    return np.zeros((vectors.shape[0], 0)), np.zeros(0)


def solve_pencil(pencil, rule, tau_zero=DEFAULT_TAU_ZERO,
                 epsilon=DEFAULT_EPSILON, dense_cutoff=DEFAULT_DENSE_CUTOFF,
                 seed=0, warn_empty=True):
    """Solve the subdomain GEVP through the regularized transform."""
    n = pencil.a.dim
    fac = factor_semidef(pencil.a, tau_zero=tau_zero, epsilon=epsilon)
    dscale = 1.0 / np.sqrt(fac.d_eps)
    perm = fac.permutation
    iperm = np.argsort(perm)

    def back_transform(y):
        xp = fac.solve_lower(dscale[:, None] * y if y.ndim == 2
                             else dscale * y, transpose=True)
        return xp[iperm] if y.ndim == 1 else xp[iperm, :]

    if n <= dense_cutoff:
        bp = pencil.b.to_dense()[np.ix_(perm, perm)]
        t = fac.solve_lower(bp)
        c = fac.solve_lower(t.T)
        c = dscale[:, None] * c * dscale[None, :]
        c = 0.5 * (c + c.T)
        res = dense_sym_eig(c)
        mu, y = res.eigenvalues, res.eigenvectors
        mu_floor = 10.0 * np.finfo(float).eps * max(mu.max(initial=0.0), 0.0)
        finite = mu > mu_floor
        mu, y = mu[finite], y[:, finite]
        lam = 1.0 / mu[::-1]           # ascending lambda
        vecs = back_transform(y[:, ::-1])
        spectrum = lam.copy()
    else:
        bp = pencil.b.csr[perm][:, perm].tocsr()

        def apply_c(v):
            u = fac.solve_lower(dscale * v, transpose=True)
            u = bp @ u
            return dscale * fac.solve_lower(u)

        if rule.mode == "eta":
            mu, y, below = eigh_partial_largest(
                apply_c, n, min_value=1.0 / rule.value, seed=seed)
        else:
            mu, y, below = eigh_partial_largest(
                apply_c, n, count=int(rule.value), seed=seed)
        lam = 1.0 / mu[::-1] if len(mu) else np.zeros(0)
        vecs = back_transform(y[:, ::-1]) if len(mu) else np.zeros((n, 0))
        spectrum = lam.copy()
        if below is not None and below > 0:
            spectrum = np.append(spectrum, 1.0 / below)

    if rule.mode == "eta":
        sel = lam < rule.value
    else:
        sel = np.zeros(len(lam), dtype=bool)
        sel[:min(int(rule.value), len(lam))] = True
    m = int(sel.sum())
    next_ev = None
    unsel = np.where(~sel)[0]
    if len(unsel):
        next_ev = float(lam[unsel[0]])
    elif len(spectrum) > len(lam):
        next_ev = float(spectrum[len(lam)])
    vectors, lams = _b_orthonormalize(vecs[:, sel], lam[sel], pencil.b.csr)
    if m and vectors.shape[1] < m:
        m = vectors.shape[1]
    if m == 0 and warn_empty:
        warnings.warn(
            f"level {pencil.level} subdomain {pencil.subdomain}: no "
            "eigenpairs selected (subdomain contributes nothing)",
            stacklevel=2)
    return SelectedEigenpairs(
        level=pencil.level, subdomain=pencil.subdomain, eigenvalues=lams,
        vectors=vectors, rule=rule, next_eigenvalue=next_ev,
        spectrum=spectrum, n_kernel=fac.num_masked)


# -- projections and stability measurements --------------------------------

def apply_projection(pencil, eig, v):
    """Pi_m v = sum_k b(v, p_k) p_k over the selected B-orthonormal pairs."""
    if eig.m == 0:
        return np.zeros_like(v)
    coeff = eig.vectors.T @ (pencil.b.csr @ v)
    return eig.vectors @ coeff


def projection_properties_check(pencil, eig, v, slack=1e-8):
    """Check the projection stability estimates on one vector.

    Returns a report dict with the three measured quantities; ``ok`` is
    True when |Pi v|_a <= |v|_a, |v - Pi v|_a <= |v|_a and, provided
    lambda_{m+1} is available and m >= dim ker A,
    |v - Pi v|_b^2 <= |v - Pi v|_a^2 / lambda_{m+1}, all within relative
    ``slack``.
    """
    a, b = pencil.a.csr, pencil.b.csr
    pv = apply_projection(pencil, eig, v)
    r = v - pv
    a_v = v @ (a @ v)
    a_pv = pv @ (a @ pv)
    a_r = r @ (a @ r)
    b_r = r @ (b @ r)
    tol = slack * max(a_v, 1e-300)
    ok = (a_pv <= a_v + tol) and (a_r <= a_v + tol)
    gap_ok = None
    if eig.next_eigenvalue is not None and eig.m >= eig.n_kernel:
        lhs = b_r * eig.next_eigenvalue
        gap_ok = lhs <= a_r + tol
        ok = ok and gap_ok
    return {"ok": bool(ok), "a_v": a_v, "a_piv": a_pv, "a_res": a_r,
            "b_res": b_r, "gap_ok": gap_ok, "m": eig.m,
            "lambda_next": eig.next_eigenvalue}


def local_stability_ratio(level, pencil, eig, v):
    """||chi (I - Pi) r v||_a^2 / |r v|_abar^2 for a level vector ``v``.

    The numerator is the global energy of the zero-extended local piece;
    the denominator the subdomain Neumann energy of the restriction.
    """
    rv = v[pencil.dofs]
    denom = rv @ (pencil.a.csr @ rv)
    w = rv - apply_projection(pencil, eig, rv)
    piece = np.zeros(level.n)
    piece[pencil.dofs] = pencil.chi * w
    num = piece @ (level.a.csr @ piece)
    return num, denom


def c1_constant(alpha, eta, c2=None):
    """Local-stability constants per GEVP variant (CG; DG alpha=2 needs c2)."""
    if alpha == 1:
        return 1.0 / eta
    if alpha == 2:
        return (1.0 if c2 is None else c2) + 1.0 / eta
    if alpha == 3:
        return 2.0 * (1.0 + 1.0 / eta)
    raise InvalidSpec(f"alpha must be 1, 2 or 3, got {alpha}")


def dg_c2_constant(penalty, d):
    """C2 entering the DG alpha=2 stability constant."""
    ratio_i = ((penalty.sigma_interior + penalty.theta_interior)
               / (penalty.sigma_interior - penalty.theta_interior))
    ratio_b = ((penalty.sigma_boundary + penalty.theta_boundary)
               / (penalty.sigma_boundary - penalty.theta_boundary))
    m_f = 2 * d
    c_tau = max(ratio_i.max(initial=0.0), ratio_b.max(initial=0.0)) \
        * m_f / penalty.s
    c_i = max(1.0, ratio_i.max(initial=1.0))
    c_d = ratio_b.max(initial=0.0)
    return max(1.0 + c_tau, c_i, c_d)


def dg_a0_constant(penalty, k0, d):
    """Strengthened-triangle-inequality constant for the DG splitting."""
    two_ratio = np.concatenate([
        2.0 * penalty.sigma_interior
        / (penalty.sigma_interior - penalty.theta_interior),
        2.0 * penalty.sigma_boundary
        / (penalty.sigma_boundary - penalty.theta_boundary)])
    sym_ratio = np.concatenate([
        (penalty.sigma_interior + penalty.theta_interior)
        / (penalty.sigma_interior - penalty.theta_interior),
        (penalty.sigma_boundary + penalty.theta_boundary)
        / (penalty.sigma_boundary - penalty.theta_boundary)])
    m_f = 2 * d
    return k0 * max(1.0 + m_f / penalty.s * two_ratio.max(initial=0.0),
                    sym_ratio.max(initial=1.0))


# -- coarse level construction ---------------------------------------------

def build_coarse_level(level, eigen, index_sets=None, neighbor_sets=None,
                       project_patches=True):
    """Assemble the next-coarser level from selected eigenpairs.

    Prolongation columns are the PoU-weighted, zero-extended eigenvectors
    grouped by generating subdomain; the coarse matrix is the Galerkin
    projection and patches are projected patchwise with their keys mapped
    through the index sets.  ``index_sets``/``neighbor_sets`` describe the
    coarser decomposition (None for the final level-0 construction).
    """
    rows, cols, vals, col_gen = [], [], [], []
    k_col = 0
    for i, eig in enumerate(eigen):
        dofs = level.dof_lists[i]
        chi = level.chi[i]
        for k in range(eig.m):
            entries = chi * eig.vectors[:, k]
            nz = entries != 0.0
            rows.append(dofs[nz])
            vals.append(entries[nz])
            cols.append(np.full(int(nz.sum()), k_col, dtype=np.int64))
            col_gen.append(i)
            k_col += 1
    if k_col == 0:
        raise EmptyCoarseSpace(
            f"no eigenpairs selected on level {level.level}")
    n_coarse = k_col
    p = sp.csr_matrix(
        (np.concatenate(vals),
         (np.concatenate(rows), np.concatenate(cols))),
        shape=(level.n, n_coarse))
    a_coarse = galerkin_project(level.a, p)
    gen = np.array(col_gen, dtype=np.int64)

    new_level = level.level - 1
    patches = None
    dof_lists, chi_l, interior, own = [], [], [], []
    if index_sets is not None:
        group_of = np.empty(level.n_subdomains, dtype=np.int64)
        for gi, j_set in enumerate(index_sets):
            group_of[j_set] = gi

        def map_key(key):
            return tuple(sorted({int(group_of[j]) for j in key}))

        from .assembly import PatchMatrixSet
        volume, skeleton, dirichlet = {}, {}, {}
        if project_patches:
            for key, mat in level.patches.volume.items():
                nk = map_key(key)
                pm = galerkin_project(mat, p)
                volume[nk] = volume[nk] + pm if nk in volume else pm
            for (km, kp), mat in level.patches.skeleton.items():
                nm, npl = map_key(km), map_key(kp)
                pm = galerkin_project(mat, p)
                if nm == npl:
                    volume[nm] = volume[nm] + pm if nm in volume else pm
                else:
                    sk = (nm, npl)
                    skeleton[sk] = skeleton[sk] + pm if sk in skeleton else pm
            for key, mat in level.patches.dirichlet.items():
                nk = map_key(key)
                pm = galerkin_project(mat, p)
                dirichlet[nk] = dirichlet[nk] + pm if nk in dirichlet else pm
            patches = PatchMatrixSet(level=new_level, dim=n_coarse,
                                     volume=volume, skeleton=skeleton,
                                     dirichlet=dirichlet)
        for gi, j_set in enumerate(index_sets):
            own_j = set(int(j) for j in j_set)
            nbr_j = set(int(j) for j in neighbor_sets[gi]) - own_j
            mask_own = np.isin(gen, list(own_j))
            mask_any = mask_own | np.isin(gen, list(nbr_j))
            dofs = np.where(mask_any)[0]
            is_own = mask_own[dofs]
            dof_lists.append(dofs)
            chi_l.append(is_own.astype(np.float64))
            interior.append(is_own.copy())
            own.append(is_own.copy())
    else:
        dof_lists = [np.arange(n_coarse)]
        chi_l = [np.ones(n_coarse)]
        interior = [np.ones(n_coarse, dtype=bool)]
        own = [np.ones(n_coarse, dtype=bool)]

    return SpectralLevel(level=new_level, n=n_coarse, a=a_coarse,
                         patches=patches, dof_lists=dof_lists, chi=chi_l,
                         interior=interior, own=own, p_to_parent=p,
                         dof_gen_subdomain=gen)


def finest_spectral_level(a, patches, pou, level=None):
    """Wrap the assembled finest-level system as a SpectralLevel."""
    n = a.dim
    return SpectralLevel(
        level=pou.level if level is None else level, n=n, a=a,
        patches=patches, dof_lists=pou.dof_lists, chi=pou.weights,
        interior=pou.interior,
        own=[np.ones(len(d), dtype=bool) for d in pou.dof_lists])


def neighbor_index_sets(hierarchy, level):
    """J-bar: finer subdomains whose elements intersect each coarse one."""
    fine_info = hierarchy.levels[level + 1]
    coarse_info = hierarchy.levels[level]
    n_elem = hierarchy.mesh.n_elements
    fine_masks = []
    for elems in fine_info.elem_sets:
        m = np.zeros(n_elem, dtype=bool)
        m[elems] = True
        fine_masks.append(m)
    out = []
    for elems in coarse_info.elem_sets:
        m = np.zeros(n_elem, dtype=bool)
        m[elems] = True
        nbrs = [j for j, fm in enumerate(fine_masks) if (fm & m).any()]
        out.append(np.array(nbrs, dtype=np.int64))
    return out


def build_spectral_hierarchy(a, patches, pou, hierarchy, alpha=1,
                             rules=None, tau_zero=DEFAULT_TAU_ZERO,
                             epsilon=DEFAULT_EPSILON,
                             dense_cutoff=DEFAULT_DENSE_CUTOFF, seed=0,
                             timings=None, threads=1):
    """Run the recursive coarse-space construction down to level 0.

    ``rules``: one SelectionRule, or a list finest-level-first.  Returns
    the list of SpectralLevel objects ordered level L .. 0; eigenpair
    collections are attached to each level as ``.eigen``.  Per-subdomain
    wall-clock setup seconds are appended to ``timings[level]`` when a
    dict is supplied.  Pencils within a level are independent and run
    under a parallel map when ``threads > 1``; levels are sequential.
    """
    num_levels = hierarchy.num_levels
    if rules is None:
        rules = SelectionRule.threshold()
    if isinstance(rules, SelectionRule):
        rules = [rules] * num_levels
    if len(rules) != num_levels:
        raise InvalidSpec("one selection rule per level expected")

    levels = [finest_spectral_level(a, patches, pou, level=num_levels)]
    for step, l in enumerate(range(num_levels, 0, -1)):
        cur = levels[-1]
        rule = rules[step]

        def solve_one(i, cur=cur, rule=rule, l=l):
            t0 = time.perf_counter()
            pencil = assemble_pencil(cur, i, alpha)
            eig = solve_pencil(pencil, rule, tau_zero=tau_zero,
                               epsilon=epsilon, dense_cutoff=dense_cutoff,
                               seed=seed + 17 * l + i)
            return eig, time.perf_counter() - t0

        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(solve_one, range(cur.n_subdomains)))
        else:
            results = [solve_one(i) for i in range(cur.n_subdomains)]
        eigen = [r[0] for r in results]
        if timings is not None:
            timings.setdefault(l, []).extend(r[1] for r in results)
        cur.eigen = eigen
        if l > 1:
            index_sets = hierarchy.levels[l - 1].index_sets
            neighbors = neighbor_index_sets(hierarchy, l - 1)
            levels.append(build_coarse_level(cur, eigen,
                                             index_sets=index_sets,
                                             neighbor_sets=neighbors))
        else:
            levels.append(build_coarse_level(cur, eigen))
    return levels
