import itertools

import numpy as np
import pytest

from mlsdd.errors import CountMismatch, InvalidSpec, NonPositiveEntry
from mlsdd.mesh import (CoefficientField, build_mesh, islands_coefficient,
                        load_cellwise_coefficients,
                        save_cellwise_coefficients)


def count_faces_by_enumeration(mesh):
    """Brute-force face counting: check all element pairs for adjacency."""
    mi = mesh.element_multi_index(np.arange(mesh.n_elements))
    interior = 0
    for a, b in itertools.combinations(range(mesh.n_elements), 2):
        diff = np.abs(mi[a] - mi[b])
        if diff.sum() == 1:
            interior += 1
    boundary = 0
    for e in range(mesh.n_elements):
        for ax in range(mesh.d):
            if mi[e, ax] == 0:
                boundary += 1
            if mi[e, ax] == mesh.cells_per_axis[ax] - 1:
                boundary += 1
    return interior, boundary


def test_2x2_unit_square_counts():
    mesh = build_mesh(2, (2, 2))
    assert mesh.n_elements == 4
    assert mesh.n_interior_faces == 4
    assert mesh.n_boundary_faces == 8


def test_3d_two_elements():
    mesh = build_mesh(3, (2, 1, 1))
    assert mesh.n_elements == 2
    assert mesh.n_interior_faces == 1
    nu = mesh.interior_normals()
    assert np.allclose(nu, [[1.0, 0.0, 0.0]])
    assert mesh.face_minus[0] == 0 and mesh.face_plus[0] == 1


def test_interior_face_formula_vs_enumeration():
    # combinatorial formula |F_I| = sum_a (n_a - 1) prod_{b != a} n_b,
    # verified against pairwise enumeration on small grids
    for cells in [(3, 4), (5, 2), (2, 3, 2)]:
        d = len(cells)
        mesh = build_mesh(d, cells)
        interior, boundary = count_faces_by_enumeration(mesh)
        assert mesh.n_interior_faces == interior
        assert mesh.n_boundary_faces == boundary
    big = build_mesh(2, (320, 320))
    assert big.n_interior_faces == 2 * 320 * 319


def test_faces_per_element_identity():
    # per element: interior incidences + boundary incidences = 2d
    for cells, d in [((4, 3), 2), ((2, 2, 3), 3)]:
        mesh = build_mesh(d, cells)
        count = np.zeros(mesh.n_elements, dtype=int)
        np.add.at(count, mesh.face_minus, 1)
        np.add.at(count, mesh.face_plus, 1)
        np.add.at(count, mesh.bface_elem, 1)
        assert (count == 2 * d).all()


def test_normals_are_signed_unit_axis_vectors():
    mesh = build_mesh(2, (3, 3))
    for nu in (mesh.interior_normals(), mesh.boundary_normals()):
        assert np.allclose(np.abs(nu).sum(axis=1), 1.0)
        assert set(np.unique(np.abs(nu))) <= {0.0, 1.0}


def test_default_dirichlet_on_x_planes():
    mesh = build_mesh(2, (4, 4))
    tagged = mesh.bface_dirichlet
    on_x = mesh.bface_axis == 0
    assert (tagged == on_x).all()
    meshall = build_mesh(2, (4, 4), boundary_spec="all-dirichlet")
    assert meshall.bface_dirichlet.all()
    meshn = build_mesh(2, (4, 4), boundary_spec="all-neumann")
    assert not meshn.bface_dirichlet.any()


def test_invalid_specs():
    with pytest.raises(InvalidSpec):
        build_mesh(2, (0, 4))
    with pytest.raises(InvalidSpec):
        build_mesh(4, (2, 2, 2, 2))
    with pytest.raises(InvalidSpec):
        build_mesh(2, (4, 4), boundary_spec="zmax")  # no z plane in 2d


def test_islands_degenerate_cases():
    mesh = build_mesh(2, (8, 8))
    f_const = islands_coefficient(mesh, 4, 1 / 16, 1.0, 1.0)
    assert np.allclose(f_const.tensors, np.eye(2))  # Laplace case
    f_uniform = islands_coefficient(mesh, 0, 0.0, 2.0, 3.0)
    assert np.allclose(f_uniform.tensors, 2.0 * np.eye(2))
    with pytest.raises(InvalidSpec):
        islands_coefficient(mesh, 4, 1 / 16, 1.0, 0.5)


def test_islands_exact_count_3x3_on_9x9():
    mesh = build_mesh(2, (9, 9))
    f = islands_coefficient(mesh, 3, 1.0 / 9.0, 1.0, 1e6)
    high = (f.tensors[:, 0, 0] > 1.0).sum()
    assert high == 9
    # the high elements are the centers of the 3x3 macro cells
    mi = mesh.element_multi_index(np.where(f.tensors[:, 0, 0] > 1.0)[0])
    assert set(map(tuple, mi)) == {(i, j) for i in (1, 4, 7)
                                   for j in (1, 4, 7)}


def test_islands_3d_extruded_in_z():
    mesh = build_mesh(3, (6, 6, 3))
    f = islands_coefficient(mesh, 2, 1 / 9, 1.0, 100.0)
    kap = f.tensors[:, 0, 0].reshape(3, 6, 6)  # z slowest axis
    assert np.allclose(kap[0], kap[1])
    assert np.allclose(kap[0], kap[2])
    assert (kap > 1).any()


def test_loader_roundtrip_and_errors(tmp_path):
    mesh = build_mesh(2, (3, 3))
    path = tmp_path / "coef.txt"
    path.write_text("1.0\n" * 9)
    f = load_cellwise_coefficients(mesh, path)
    assert np.allclose(f.tensors, np.eye(2))

    rows = ["1.0"] * 9
    rows[4] = "1e7"
    path.write_text("\n".join(rows) + "\n")
    f = load_cellwise_coefficients(mesh, path)
    assert f.tensors[4, 0, 0] == 1e7
    assert f.tensors[3, 0, 0] == 1.0

    rng = np.random.default_rng(6)
    diag = rng.uniform(0.5, 2.0, size=(9, 2))
    f0 = CoefficientField.from_diagonals(mesh, diag)
    save_cellwise_coefficients(f0, path)
    f1 = load_cellwise_coefficients(mesh, path)
    assert (f1.tensors == f0.tensors).all()  # bit-exact roundtrip

    path.write_text("1.0\n" * 8)
    with pytest.raises(CountMismatch):
        load_cellwise_coefficients(mesh, path)
    path.write_text("1.0\n" * 8 + "-2.0\n")
    with pytest.raises(NonPositiveEntry):
        load_cellwise_coefficients(mesh, path)


def test_coefficient_validation():
    mesh = build_mesh(2, (2, 2))
    t = np.tile(np.array([[1.0, 2.0], [2.0, 1.0]]), (4, 1, 1))
    with pytest.raises(NonPositiveEntry):
        CoefficientField(t).validate()  # eigenvalues -1, 3
