import numpy as np
import pytest
from scipy.linalg import eigh

from conftest import Case
from mlsdd.errors import EmptySubdomain, InvalidSpec
from mlsdd.sparse import SparseSymMatrix
from mlsdd.spectral import (SelectionRule, apply_projection, assemble_pencil,
                            build_coarse_level, c1_constant, dg_a0_constant,
                            dg_c2_constant, local_stability_ratio,
                            pencil_from_generating,
                            projection_properties_check, solve_pencil)


def pencil_oracle(a_dense, b_dense):
    """Independent GEVP oracle via the shifted pencil b = mu' (a + b):
    mu' = 1/(1 + lambda), valid for PSD pairs with trivial kernel
    intersection.  Returns finite eigenvalues ascending."""
    mu = eigh(b_dense, a_dense + b_dense, eigvals_only=True)
    mu = np.clip(mu, 0.0, 1.0)
    finite = mu > 1e-12
    lam = (1.0 - mu[finite]) / mu[finite]
    return np.sort(lam)


def test_diagonal_pencil_selection():
    a = SparseSymMatrix.from_dense(np.diag([2.0, 3.0]))
    b = SparseSymMatrix.identity(2)
    pencil = pencil_from_generating(a, b, np.eye(2))
    eig = solve_pencil(pencil, SelectionRule.threshold(2.5))
    assert eig.m == 1
    assert np.allclose(eig.eigenvalues, [2.0])
    assert np.allclose(np.sort(eig.spectrum), [2.0, 3.0])
    eig2 = solve_pencil(pencil, SelectionRule.fixed(2))
    assert eig2.m == 2


def test_neumann_chain_kernel_is_selected():
    # A singular (constants), B SPD: smallest lambda is of order epsilon
    n = 5
    d = np.full(n, 2.0)
    d[0] = d[-1] = 1.0
    a_dense = np.diag(d) - np.diag(np.ones(n - 1), 1) \
        - np.diag(np.ones(n - 1), -1)
    rng = np.random.default_rng(1)
    q = rng.standard_normal((n, n))
    b_dense = q @ q.T + np.eye(n)
    a = SparseSymMatrix.from_dense(a_dense)
    b = SparseSymMatrix.from_dense(b_dense)
    pencil = pencil_from_generating(a, b, np.eye(n))
    eig = solve_pencil(pencil, SelectionRule.threshold(0.3), epsilon=1e-8)
    assert eig.n_kernel == 1
    assert eig.m >= 1
    assert eig.eigenvalues[0] < 1e-6  # epsilon-order kernel eigenvalue
    const = eig.vectors[:, 0]
    assert np.linalg.norm(a_dense @ const) <= 1e-7 * np.linalg.norm(const)
    # finite spectrum against the shifted-pencil oracle
    expect = pencil_oracle(a_dense, b_dense)
    got = np.sort(eig.spectrum)[1:]  # drop the epsilon kernel value
    assert np.allclose(got, expect[1:], rtol=1e-6)


def test_duplicated_generating_vector_rejected():
    # ker A cap ker B directions get mu = 0 and are excluded; selected
    # eigenvalues match the explicit-basis pencil
    n = 6
    d = np.full(n, 2.0)
    d[0] = d[-1] = 1.0
    a_dense = np.diag(d) - np.diag(np.ones(n - 1), 1) \
        - np.diag(np.ones(n - 1), -1)
    rng = np.random.default_rng(2)
    q = rng.standard_normal((n, n))
    b_dense = q @ q.T + 0.5 * np.eye(n)
    a = SparseSymMatrix.from_dense(a_dense)
    b = SparseSymMatrix.from_dense(b_dense)
    basis = np.eye(n)
    dup = np.column_stack([basis, basis[:, 2]])
    p_ref = pencil_from_generating(a, b, basis)
    p_dup = pencil_from_generating(a, b, dup)
    rule = SelectionRule.threshold(0.5)
    e_ref = solve_pencil(p_ref, rule)
    e_dup = solve_pencil(p_dup, rule)
    assert e_dup.n_kernel == e_ref.n_kernel + 1  # the spurious direction
    assert e_dup.m == e_ref.m
    assert np.allclose(e_dup.eigenvalues, e_ref.eigenvalues, rtol=1e-6)
    assert len(e_dup.spectrum) == len(e_ref.spectrum)  # mu = 0 excluded


def test_selected_vectors_b_orthonormal():
    case = Case((8, 8), subdomains=(4,), delta=1, field="islands")
    lv = case.finest_level()
    pencil = assemble_pencil(lv, 0, 1)
    eig = solve_pencil(pencil, SelectionRule.fixed(4))
    gram = eig.vectors.T @ (pencil.b.csr @ eig.vectors)
    assert np.abs(gram - np.eye(eig.m)).max() <= 1e-8


def test_alpha1_single_subdomain_full_weights():
    # single subdomain, chi = 1 on interior dofs: B equals A on the
    # interior block (all-Neumann so no elimination effects)
    case = Case((4, 4), subdomains=(1,), delta=1, boundary="all-neumann")
    lv = case.finest_level()
    pencil = assemble_pencil(lv, 0, 1)
    assert np.allclose(pencil.chi, 1.0)
    assert np.abs(pencil.b.to_dense() - pencil.a.to_dense()).max() \
        <= 1e-14 * pencil.a.max_abs()


def test_alpha2_empty_ring_gives_zero_b():
    case = Case((4, 4), subdomains=(1,), delta=1, boundary="all-neumann")
    lv = case.finest_level()
    with pytest.warns(UserWarning):
        pencil = assemble_pencil(lv, 0, 2)
        assert pencil.b.max_abs() == 0.0
        eig = solve_pencil(pencil, SelectionRule.threshold(0.3))
    assert eig.m == 0


def test_alpha3_kernel_separation():
    # chi = 1 strictly inside: B localizes at the boundary layer; the
    # constant is in ker(A) but not in ker(B)
    case = Case((4, 4), subdomains=(2,), delta=1, boundary="all-neumann")
    lv = case.finest_level()
    pencil = assemble_pencil(lv, 0, 3)
    interior = pencil.chi == 1.0
    bd = pencil.b.to_dense()
    assert interior.any()
    assert np.abs(bd[np.ix_(interior, interior)]).max() == 0.0
    ones = np.ones(pencil.a.dim)
    assert ones @ (pencil.b.csr @ ones) > 0
    assert np.abs(pencil.a.csr @ ones).max() <= 1e-12 * pencil.a.max_abs()


def test_alpha_validation_and_empty_subdomain():
    case = Case((4, 4), subdomains=(2,), delta=1)
    lv = case.finest_level()
    with pytest.raises(InvalidSpec):
        assemble_pencil(lv, 0, 4)
    lv.dof_lists[0] = np.zeros(0, dtype=np.int64)
    with pytest.raises(EmptySubdomain):
        assemble_pencil(lv, 0, 1)


def test_projection_trivial_cases(rng):
    case = Case((8, 8), subdomains=(4,), delta=1, field="islands")
    lv = case.finest_level()
    pencil = assemble_pencil(lv, 0, 1)
    eig = solve_pencil(pencil, SelectionRule.fixed(3))
    # v = selected eigenvector: projection reproduces it
    v = eig.vectors[:, 1].copy()
    pv = apply_projection(pencil, eig, v)
    scale = np.linalg.norm(v)
    assert np.linalg.norm(pv - v) <= 1e-8 * scale
    rep = projection_properties_check(pencil, eig, v)
    assert rep["ok"] and rep["a_res"] <= 1e-10 * max(rep["a_v"], 1.0)
    # v orthogonal (in B) to the selected span: projection annihilates it
    w = rng.standard_normal(pencil.a.dim)
    bw = pencil.b.csr @ w
    w = w - eig.vectors @ (eig.vectors.T @ bw)
    pw = apply_projection(pencil, eig, w)
    bnorm = np.sqrt(w @ (pencil.b.csr @ w))
    assert np.linalg.norm(pw) <= 1e-7 * max(bnorm, 1.0)


@pytest.mark.parametrize("alpha", [1, 2, 3])
@pytest.mark.parametrize("scheme", ["cg-q1", "dg-q1"])
def test_projection_stability_random(alpha, scheme, rng):
    case = Case((8, 8), scheme=scheme, subdomains=(4,), delta=1,
                field="islands")
    lv = case.finest_level()
    for i in range(lv.n_subdomains):
        pencil = assemble_pencil(lv, i, alpha)
        eig = solve_pencil(pencil, SelectionRule.threshold(0.3),
                           warn_empty=False)
        if eig.m < eig.n_kernel:
            continue
        for _ in range(25):
            v = rng.standard_normal(pencil.a.dim)
            rep = projection_properties_check(pencil, eig, v, slack=1e-8)
            assert rep["ok"]


@pytest.mark.parametrize("alpha", [1, 2, 3])
def test_local_stability_constants_cg(alpha, rng):
    eta = 0.3
    case = Case((8, 8), subdomains=(4,), delta=1, field="islands")
    lv = case.finest_level()
    c1 = c1_constant(alpha, eta)
    for i in range(lv.n_subdomains):
        pencil = assemble_pencil(lv, i, alpha)
        eig = solve_pencil(pencil, SelectionRule.threshold(eta),
                           warn_empty=False)
        for _ in range(25):
            v = rng.standard_normal(lv.n)
            num, den = local_stability_ratio(lv, pencil, eig, v)
            assert num <= c1 * den * (1 + 1e-8)


def test_spsd_splitting_bound(rng):
    # sum_i |r_i v|^2_abar <= k0 ||v||^2_a for CG
    case = Case((8, 8), subdomains=(4,), delta=1, field="islands")
    lv = case.finest_level()
    k0 = case.hierarchy.k0
    pencils = [assemble_pencil(lv, i, 1) for i in range(lv.n_subdomains)]
    for _ in range(50):
        v = rng.standard_normal(lv.n)
        total = sum(v[p.dofs] @ (p.a.csr @ v[p.dofs]) for p in pencils)
        assert total <= k0 * (v @ (lv.a.csr @ v)) * (1 + 1e-12)


def test_strengthened_triangle_inequality_cg(rng):
    case = Case((8, 8), subdomains=(4,), delta=1, field="islands")
    lv = case.finest_level()
    k0 = case.hierarchy.k0
    for _ in range(50):
        pieces, total = [], np.zeros(lv.n)
        energy = 0.0
        for i in range(lv.n_subdomains):
            mask = lv.interior[i]
            z = np.zeros(lv.n)
            z[lv.dof_lists[i][mask]] = rng.standard_normal(int(mask.sum()))
            total += z
            energy += z @ (lv.a.csr @ z)
        lhs = total @ (lv.a.csr @ total)
        assert lhs <= k0 * energy * (1 + 1e-12)


def test_reconstruction_and_nestedness(rng):
    from mlsdd.spectral import build_spectral_hierarchy
    case = Case((16, 16), subdomains=(16, 4), delta=1, field="islands")
    levels = build_spectral_hierarchy(case.a, case.patches, case.pou,
                                      case.hierarchy, alpha=1,
                                      rules=SelectionRule.threshold(0.4))
    lv = levels[0]
    eigen = lv.eigen
    scale = np.sqrt(lv.a.max_abs())
    for _ in range(10):
        v = rng.standard_normal(lv.n)
        coarse_coeff = []
        total = np.zeros(lv.n)
        for i, eig in enumerate(eigen):
            pencil = assemble_pencil(lv, i, 1)
            rv = v[pencil.dofs]
            coeff = eig.vectors.T @ (pencil.b.csr @ rv) if eig.m else \
                np.zeros(0)
            w = rv - (eig.vectors @ coeff if eig.m else 0.0)
            piece = np.zeros(lv.n)
            piece[pencil.dofs] = pencil.chi * w
            total += piece
            coarse_coeff.append(coeff)
        c = np.concatenate(coarse_coeff)
        v_coarse = levels[1].p_to_parent @ c
        err = np.abs(total + v_coarse - v).max()
        assert err <= 1e-12 * max(np.abs(v).max(), 1.0)
    # nestedness: every coarse column lives inside its subdomain's dofs
    p = levels[1].p_to_parent.tocsc()
    gen = levels[1].dof_gen_subdomain
    for k in range(levels[1].n):
        rows = p.indices[p.indptr[k]:p.indptr[k + 1]]
        allowed = set(lv.dof_lists[gen[k]].tolist())
        assert set(rows.tolist()) <= allowed


def test_galerkin_identity_exact(rng):
    case = Case((8, 8), subdomains=(4,), delta=1)
    from mlsdd.spectral import build_spectral_hierarchy
    levels = build_spectral_hierarchy(case.a, case.patches, case.pou,
                                      case.hierarchy,
                                      rules=SelectionRule.fixed(3))
    lv1, lv0 = levels
    for _ in range(10):
        c = rng.standard_normal(lv0.n)
        pc = lv0.p_to_parent @ c
        lhs = c @ (lv0.a.csr @ c)
        rhs = pc @ (lv1.a.csr @ pc)
        assert abs(lhs - rhs) <= 1e-12 * max(abs(rhs), 1e-8)


def test_projected_patches_sum_to_coarse_matrix():
    case = Case((16, 16), subdomains=(16, 4), delta=1, field="islands")
    from mlsdd.spectral import build_spectral_hierarchy
    levels = build_spectral_hierarchy(case.a, case.patches, case.pou,
                                      case.hierarchy,
                                      rules=SelectionRule.threshold(0.4))
    mid = levels[1]
    total = mid.patches.total()
    diff = np.abs((total.csr - mid.a.csr)).max()
    assert diff <= 1e-13 * max(mid.a.max_abs(), 1e-30)


def test_coarse_level_dof_structure():
    case = Case((16, 16), subdomains=(16, 4), delta=1)
    from mlsdd.spectral import build_spectral_hierarchy
    levels = build_spectral_hierarchy(case.a, case.patches, case.pou,
                                      case.hierarchy,
                                      rules=SelectionRule.fixed(1))
    mid = levels[1]
    assert mid.n == 16  # one column per fine subdomain
    j_sets = case.hierarchy.levels[1].index_sets
    for i in range(mid.n_subdomains):
        own = mid.dof_lists[i][mid.own[i]]
        assert set(mid.dof_gen_subdomain[own]) == set(
            int(j) for j in j_sets[i])
        nbr = mid.dof_lists[i][~mid.own[i]]
        assert len(nbr) > 0  # neighbor restrictions present
        assert np.allclose(mid.chi[i][mid.own[i]], 1.0)
        assert np.allclose(mid.chi[i][~mid.own[i]], 0.0)


def test_partial_path_matches_dense_path():
    case = Case((16, 16), subdomains=(4,), delta=2, field="islands")
    lv = case.finest_level()
    pencil = assemble_pencil(lv, 1, 1)
    rule = SelectionRule.threshold(0.4)
    dense = solve_pencil(pencil, rule, dense_cutoff=10 ** 6, warn_empty=False)
    partial = solve_pencil(pencil, rule, dense_cutoff=1, warn_empty=False,
                           seed=5)
    assert partial.m == dense.m
    assert np.allclose(partial.eigenvalues, dense.eigenvalues, rtol=1e-6,
                       atol=1e-12)


def test_threaded_hierarchy_matches_sequential():
    from mlsdd.spectral import build_spectral_hierarchy
    case = Case((8, 8), subdomains=(4,), delta=1, field="islands")
    rule = SelectionRule.fixed(2)
    l1 = build_spectral_hierarchy(case.a, case.patches, case.pou,
                                  case.hierarchy, rules=rule, threads=1)
    l2 = build_spectral_hierarchy(case.a, case.patches, case.pou,
                                  case.hierarchy, rules=rule, threads=3)
    for e1, e2 in zip(l1[0].eigen, l2[0].eigen):
        assert np.array_equal(e1.eigenvalues, e2.eigenvalues)


def test_dg_constants_helpers():
    case = Case((4, 4), scheme="dg-q1", subdomains=(2,), delta=1)
    c2 = dg_c2_constant(case.penalty, 2)
    assert c2 >= 1.0
    a0 = dg_a0_constant(case.penalty, k0=2, d=2)
    # safety = 2 gives sigma = 2 theta: ratios 4 and 3, m_F = 4, s = 4
    assert a0 == pytest.approx(2 * max(1 + 4.0, 3.0))
    assert c1_constant(2, 0.5, c2=c2) == pytest.approx(c2 + 2.0)
    assert c1_constant(1, 0.25) == pytest.approx(4.0)
    assert c1_constant(3, 0.5) == pytest.approx(6.0)
