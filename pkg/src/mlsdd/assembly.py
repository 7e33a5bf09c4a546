"""Bilinear-form assembly: conforming Q1, weighted interior-penalty DG Q1,
and a two-point-flux cell-centered finite volume scheme.

All schemes share the same face bookkeeping so that patch matrices (the
per-membership-set stiffness pieces the multilevel machinery consumes)
can be assembled uniformly:

* volume contributions go to the patch of the element's owner set,
* boundary-face terms go to the owner element's patch,
* interior-face terms go to a volume patch when both elements share the
  same owner set and to a skeleton patch otherwise.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionMismatch, InvalidSpec, PenaltyTooSmall
from .sparse import SparseSymMatrix

DEFAULT_PENALTY_S = 4.0
DEFAULT_SAFETY = 2.0

_GAUSS = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


# -- Q1 reference machinery -------------------------------------------

def _corner_bits(d):
    return np.array([[(k >> a) & 1 for a in range(d)]
                     for k in range(2 ** d)], dtype=np.int64)


def _shape_1d(t, h, bit):
    return t / h if bit else 1.0 - t / h


def _dshape_1d(h, bit):
    return 1.0 / h if bit else -1.0 / h


@lru_cache(maxsize=None)
def _volume_quadrature(d, h):
    """(points (nq, d), weights (nq,)) of the 2^d Gauss rule, exact here."""
    axes = [np.array([g * h[a] for g in _GAUSS]) for a in range(d)]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.reshape(-1) for g in grids], axis=1)
    w = np.full(len(pts), np.prod(h) / len(pts))
    return pts, w


def _basis_at(d, h, pts):
    """Values (nq, 2^d) and gradients (nq, 2^d, d) of Q1 basis at points."""
    bits = _corner_bits(d)
    nq, m = len(pts), 2 ** d
    vals = np.ones((nq, m))
    grads = np.ones((nq, m, d))
    for a in range(d):
        for k in range(m):
            la = _shape_1d(pts[:, a], h[a], bits[k, a])
            vals[:, k] *= la
            for b in range(d):
                if b == a:
                    grads[:, k, b] *= _dshape_1d(h[a], bits[k, a])
                else:
                    grads[:, k, b] *= la
    return vals, grads


@lru_cache(maxsize=None)
def _stiffness_base(d, h):
    """M[a, b, i, j] = int_tau d_a(phi_i) d_b(phi_j); K-independent part."""
    pts, w = _volume_quadrature(d, h)
    _, grads = _basis_at(d, h, pts)
    return np.einsum("q,qia,qjb->abij", w, grads, grads)


@lru_cache(maxsize=None)
def _face_basis(d, h, axis, side):
    """Trace values/gradients and physical weights on one element face."""
    in_face = [a for a in range(d) if a != axis]
    axes = [np.array([g * h[a] for g in _GAUSS]) for a in in_face]
    if in_face:
        grids = np.meshgrid(*axes, indexing="ij")
        coords = [g.reshape(-1) for g in grids]
        nq = len(coords[0])
    else:  # pragma: no cover - d >= 2 always has in-face axes
        coords, nq = [], 1
    pts = np.zeros((nq, d))
    for a, c in zip(in_face, coords):
        pts[:, a] = c
    pts[:, axis] = side * h[axis]
    vals, grads = _basis_at(d, h, pts)
    area = np.prod([h[a] for a in in_face]) if in_face else 1.0
    w = np.full(nq, area / nq)
    return vals, grads, w


def element_stiffness(h, tensor):
    """Exact Q1 stiffness of one axis-parallel element with constant K."""
    tensor = np.asarray(tensor, dtype=np.float64)
    d = tensor.shape[0]
    if len(h) != d:
        raise DimensionMismatch("spacing/tensor dimension mismatch")
    base = _stiffness_base(d, tuple(float(x) for x in h))
    return np.einsum("ab,abij->ij", tensor, base)


def _all_element_stiffness(mesh, field):
    base = _stiffness_base(mesh.d, mesh.h)
    return np.einsum("eab,abij->eij", field.tensors, base)


@lru_cache(maxsize=None)
def trace_constant(d):
    """Discrete trace constant C_t of Q1 on the reference element.

    Largest generalized eigenvalue of the face mass against the volume
    mass on the unit cube; the element extent along the face normal is
    the length scale, i.e. ||w||^2_face <= (C_t^2 / h_n) ||w||^2_vol.
    """
    from scipy.linalg import eigh
    h = (1.0,) * d
    fv, _, fw = _face_basis(d, h, 0, 0)
    mf = np.einsum("q,qi,qj->ij", fw, fv, fv)
    pts, w = _volume_quadrature(d, h)
    vv, _ = _basis_at(d, h, pts)
    mv = np.einsum("q,qi,qj->ij", w, vv, vv)
    lam = eigh(mf, mv, eigvals_only=True)
    return float(np.sqrt(lam[-1]))


# -- dof maps ----------------------------------------------------------

@dataclass
class DofMap:
    """Local-to-global dof map with Dirichlet bookkeeping.

    CG eliminates Dirichlet vertices (entries -1 in ``elem_dofs``); DG
    and CCFV keep per-element dofs and record the Dirichlet face ids.
    """

    scheme: str
    n: int
    elem_dofs: np.ndarray
    dirichlet_vertices: np.ndarray | None = None
    dirichlet_faces: np.ndarray | None = None
    vertex_dof: np.ndarray | None = None

    @property
    def dofs_per_elem(self):
        return self.elem_dofs.shape[1]


def build_dofmap(mesh, scheme):
    scheme = scheme.lower()
    if scheme == "cg-q1":
        ev = mesh.element_vertices()
        nv = mesh.n_vertices
        bits = _corner_bits(mesh.d)
        dir_mask = np.zeros(nv, dtype=bool)
        dfaces = np.where(mesh.bface_dirichlet)[0]
        for f in dfaces:
            el, ax, side = (mesh.bface_elem[f], mesh.bface_axis[f],
                            mesh.bface_side[f])
            on_face = bits[:, ax] == side
            dir_mask[ev[el, on_face]] = True
        vertex_dof = np.full(nv, -1, dtype=np.int64)
        keep = np.where(~dir_mask)[0]
        vertex_dof[keep] = np.arange(len(keep))
        return DofMap(scheme="cg-q1", n=len(keep), elem_dofs=vertex_dof[ev],
                      dirichlet_vertices=np.where(dir_mask)[0],
                      vertex_dof=vertex_dof)
    if scheme == "dg-q1":
        m = 2 ** mesh.d
        elem_dofs = (np.arange(mesh.n_elements)[:, None] * m
                     + np.arange(m)[None, :])
        return DofMap(scheme="dg-q1", n=mesh.n_elements * m,
                      elem_dofs=elem_dofs,
                      dirichlet_faces=np.where(mesh.bface_dirichlet)[0])
    if scheme == "ccfv":
        return DofMap(scheme="ccfv", n=mesh.n_elements,
                      elem_dofs=np.arange(mesh.n_elements)[:, None],
                      dirichlet_faces=np.where(mesh.bface_dirichlet)[0])
    raise InvalidSpec(f"unknown scheme {scheme!r}")


# -- penalties ---------------------------------------------------------

@dataclass
class PenaltyParameters:
    """Per-face WSIP penalties, thresholds and diffusivity weights."""

    s: float
    c_t: float
    safety: float
    sigma_interior: np.ndarray
    theta_interior: np.ndarray
    omega_minus: np.ndarray
    omega_plus: np.ndarray
    delta_minus: np.ndarray
    delta_plus: np.ndarray
    sigma_boundary: np.ndarray
    theta_boundary: np.ndarray
    delta_boundary: np.ndarray

    def validate(self):
        if not (self.omega_minus >= 0).all() or not (self.omega_plus >= 0).all():
            raise InvalidSpec("negative face weight")
        if len(self.omega_minus) and \
                np.abs(self.omega_minus + self.omega_plus - 1.0).max() > 1e-14:
            raise InvalidSpec("face weights do not sum to one")
        if (self.sigma_interior <= self.theta_interior).any() or \
                (self.sigma_boundary <= self.theta_boundary).any():
            raise PenaltyTooSmall("sigma <= theta on some face")


def compute_penalties(mesh, field, s=DEFAULT_PENALTY_S, c_t=None,
                      safety=DEFAULT_SAFETY):
    """Face penalties sigma = safety * theta with the coercivity thresholds
    theta built from the diffusivities normal to each face.

    The element length entering theta is the extent along the face
    normal (the direction the trace inequality sees).
    """
    if s <= 0:
        raise InvalidSpec("penalty parameter s must be positive")
    if safety <= 1:
        raise InvalidSpec("penalty safety factor must exceed 1")
    if c_t is None:
        c_t = trace_constant(mesh.d)
    ax = mesh.face_axis
    dm = field.normal_diffusivity(mesh.face_minus, ax)
    dp = field.normal_diffusivity(mesh.face_plus, ax)
    h_n = np.asarray(mesh.h)[ax]
    theta_i = c_t ** 2 * s / h_n * (dm * dp / (dm + dp))
    om = dp / (dm + dp)
    op = dm / (dm + dp)
    bax = mesh.bface_axis
    db = field.normal_diffusivity(mesh.bface_elem, bax)
    theta_b = c_t ** 2 * s * db / (2.0 * np.asarray(mesh.h)[bax])
    return PenaltyParameters(
        s=float(s), c_t=float(c_t), safety=float(safety),
        sigma_interior=safety * theta_i, theta_interior=theta_i,
        omega_minus=om, omega_plus=op, delta_minus=dm, delta_plus=dp,
        sigma_boundary=safety * theta_b, theta_boundary=theta_b,
        delta_boundary=db)


# -- local face matrices ------------------------------------------------

def _dg_interior_face_mats(mesh, field, penalty):
    """(n_ifaces, 2m, 2m) local WSIP matrices; dofs = [minus, plus]."""
    d, m = mesh.d, 2 ** mesh.d
    out = np.zeros((mesh.n_interior_faces, 2 * m, 2 * m))
    for a in range(d):
        sel = np.where(mesh.face_axis == a)[0]
        if not len(sel):
            continue
        vm, gm, w = _face_basis(d, mesh.h, a, 1)   # minus element, max side
        vp, gp, _ = _face_basis(d, mesh.h, a, 0)   # plus element, min side
        nq = len(w)
        jump = np.zeros((nq, 2 * m))
        jump[:, :m] = vm
        jump[:, m:] = -vp
        km = field.tensors[mesh.face_minus[sel]][:, a, :]
        kp = field.tensors[mesh.face_plus[sel]][:, a, :]
        fm = np.einsum("fb,qib->fqi", km, gm)      # (K^- grad phi^-) . nu
        fp = np.einsum("fb,qib->fqi", kp, gp)
        flux = np.zeros((len(sel), nq, 2 * m))
        flux[:, :, :m] = penalty.omega_minus[sel, None, None] * fm
        flux[:, :, m:] = penalty.omega_plus[sel, None, None] * fp
        jj = np.einsum("q,qi,qj->ij", w, jump, jump)
        fj = np.einsum("q,fqi,qj->fij", w, flux, jump)
        out[sel] = penalty.sigma_interior[sel, None, None] * jj[None] \
            - fj - fj.transpose(0, 2, 1)
    return out


def _dg_boundary_face_mats(mesh, field, penalty, faces):
    """(len(faces), m, m) local Dirichlet-face matrices."""
    d, m = mesh.d, 2 ** mesh.d
    out = np.zeros((len(faces), m, m))
    ax = mesh.bface_axis[faces]
    side = mesh.bface_side[faces]
    for a in range(d):
        for s_ in (0, 1):
            pick = np.where((ax == a) & (side == s_))[0]
            if not len(pick):
                continue
            v, g, w = _face_basis(d, mesh.h, a, s_)
            sign = 1.0 if s_ == 1 else -1.0
            kk = field.tensors[mesh.bface_elem[faces[pick]]][:, a, :]
            fl = sign * np.einsum("fb,qib->fqi", kk, g)
            vv = np.einsum("q,qi,qj->ij", w, v, v)
            fv = np.einsum("q,fqi,qj->fij", w, fl, v)
            out[pick] = penalty.sigma_boundary[faces[pick], None, None] \
                * vv[None] - fv - fv.transpose(0, 2, 1)
    return out


def _ccfv_transmissibilities(mesh, field):
    ax = mesh.face_axis
    dm = field.normal_diffusivity(mesh.face_minus, ax)
    dp = field.normal_diffusivity(mesh.face_plus, ax)
    h_n = np.asarray(mesh.h)[ax]
    areas = np.array([mesh.face_area(a) for a in range(mesh.d)])[ax]
    t_int = areas * 2.0 * dm * dp / ((dm + dp) * h_n)
    bax = mesh.bface_axis
    db = field.normal_diffusivity(mesh.bface_elem, bax)
    t_bnd = (np.array([mesh.face_area(a) for a in range(mesh.d)])[bax]
             * 2.0 * db / np.asarray(mesh.h)[bax])
    return t_int, t_bnd


# -- global assembly ----------------------------------------------------

def _scatter(dofmap, elem_ids, local, n, extra=()):
    """Scatter (len(elem_ids), m, m) local blocks plus extra COO groups."""
    rows_all, cols_all, vals_all = [], [], []
    if len(elem_ids):
        dofs = dofmap.elem_dofs[elem_ids]
        m = dofs.shape[1]
        r = np.repeat(dofs[:, :, None], m, axis=2)
        c = np.repeat(dofs[:, None, :], m, axis=1)
        keep = (r >= 0) & (c >= 0)
        rows_all.append(r[keep])
        cols_all.append(c[keep])
        vals_all.append(local[keep])
    for r, c, v in extra:
        rows_all.append(r)
        cols_all.append(c)
        vals_all.append(v)
    if rows_all:
        rows = np.concatenate(rows_all)
        cols = np.concatenate(cols_all)
        vals = np.concatenate(vals_all)
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    return SparseSymMatrix.from_coo(n, rows, cols, vals, validate=False)


def _face_coo(dofmap, minus, plus, local):
    """COO triplets of stacked [minus, plus] face blocks."""
    m = dofmap.dofs_per_elem
    dofs = np.concatenate([dofmap.elem_dofs[minus], dofmap.elem_dofs[plus]],
                          axis=1)
    r = np.repeat(dofs[:, :, None], 2 * m, axis=2)
    c = np.repeat(dofs[:, None, :], 2 * m, axis=1)
    return r.reshape(-1), c.reshape(-1), local.reshape(-1)


def _bface_coo(dofmap, faces, mesh, local):
    m = dofmap.dofs_per_elem
    dofs = dofmap.elem_dofs[mesh.bface_elem[faces]]
    r = np.repeat(dofs[:, :, None], m, axis=2)
    c = np.repeat(dofs[:, None, :], m, axis=1)
    return r.reshape(-1), c.reshape(-1), local.reshape(-1)


def assemble_cg(mesh, field, dofmap, f=1.0):
    """Assemble the conforming Q1 operator with Dirichlet elimination.

    Returns (SparseSymMatrix over kept dofs, load vector for constant f).
    """
    if dofmap.scheme != "cg-q1":
        raise InvalidSpec("assemble_cg needs a CG dofmap")
    local = _all_element_stiffness(mesh, field)
    a = _scatter(dofmap, np.arange(mesh.n_elements), local, dofmap.n)
    b = np.zeros(dofmap.n)
    phi_int = mesh.element_volume / 2 ** mesh.d
    dofs = dofmap.elem_dofs
    np.add.at(b, dofs[dofs >= 0], f * phi_int)
    return a, b


def assemble_dg(mesh, field, dofmap, penalty, f=1.0):
    """Assemble the weighted symmetric interior-penalty DG Q1 operator."""
    if dofmap.scheme != "dg-q1":
        raise InvalidSpec("assemble_dg needs a DG dofmap")
    penalty.validate()
    local = _all_element_stiffness(mesh, field)
    iface = _dg_interior_face_mats(mesh, field, penalty)
    dfaces = dofmap.dirichlet_faces
    bface = _dg_boundary_face_mats(mesh, field, penalty, dfaces)
    extra = [_face_coo(dofmap, mesh.face_minus, mesh.face_plus, iface),
             _bface_coo(dofmap, dfaces, mesh, bface)]
    a = _scatter(dofmap, np.arange(mesh.n_elements), local, dofmap.n,
                 extra=extra)
    b = np.full(dofmap.n, f * mesh.element_volume / 2 ** mesh.d)
    return a, b


def assemble_ccfv(mesh, field, dofmap, f=1.0):
    """Two-point flux cell-centered finite volumes (harmonic averaging)."""
    if dofmap.scheme != "ccfv":
        raise InvalidSpec("assemble_ccfv needs a ccfv dofmap")
    t_int, t_bnd = _ccfv_transmissibilities(mesh, field)
    nf = mesh.n_interior_faces
    local = np.empty((nf, 2, 2))
    local[:, 0, 0] = t_int
    local[:, 1, 1] = t_int
    local[:, 0, 1] = -t_int
    local[:, 1, 0] = -t_int
    dfaces = dofmap.dirichlet_faces
    blocal = t_bnd[dfaces].reshape(-1, 1, 1)
    extra = [_face_coo(dofmap, mesh.face_minus, mesh.face_plus, local),
             _bface_coo(dofmap, dfaces, mesh, blocal)]
    a = _scatter(dofmap, np.arange(0), np.zeros((0, 1, 1)), dofmap.n,
                 extra=extra)
    b = np.full(dofmap.n, f * mesh.element_volume)
    return a, b


def assemble(mesh, field, dofmap, penalty=None, f=1.0):
    if dofmap.scheme == "cg-q1":
        return assemble_cg(mesh, field, dofmap, f=f)
    if dofmap.scheme == "dg-q1":
        return assemble_dg(mesh, field, dofmap, penalty, f=f)
    return assemble_ccfv(mesh, field, dofmap, f=f)


# -- patch matrices ------------------------------------------------------

@dataclass
class PatchMatrixSet:
    """Stiffness split into nonoverlapping membership-keyed pieces.

    ``volume`` maps a sorted tuple of subdomain ids to the matrix carrying
    every contribution owned by elements with exactly that owner set
    (boundary-face terms included); ``skeleton`` (face schemes only) maps
    ordered key pairs to the matrices of faces whose two elements have
    different owner sets.  Volume plus skeleton pieces sum to the global
    matrix entrywise.  ``dirichlet`` re-exposes just the Dirichlet-face
    part of each volume patch (already contained in it), which the
    overlap-ring bilinear form of the original-GenEO GEVP variant needs
    separately.
    """

    level: int
    dim: int
    volume: dict
    skeleton: dict
    dirichlet: dict = None

    def __post_init__(self):
        if self.dirichlet is None:
            self.dirichlet = {}

    def total(self):
        from .sparse import sparse_sum
        mats = list(self.volume.values()) + list(self.skeleton.values())
        return sparse_sum(mats, dim=self.dim)


def element_membership(n_elements, elem_subdomains):
    """Per-element sorted owner tuples J_tau from per-subdomain element sets."""
    owners = [[] for _ in range(n_elements)]
    for i, elems in enumerate(elem_subdomains):
        for e in elems:
            owners[int(e)].append(i)
    return [tuple(o) for o in owners]


def build_patches(mesh, field, dofmap, elem_subdomains, penalty=None,
                  level=0):
    """Assemble volume and skeleton patch matrices over the global dofs.

    ``elem_subdomains``: one element-id array per subdomain (overlapping).
    """
    n_elem = mesh.n_elements
    keys = element_membership(n_elem, elem_subdomains)
    if any(len(k) == 0 for k in keys):
        raise InvalidSpec("element not covered by any subdomain")
    groups = {}
    for e, key in enumerate(keys):
        groups.setdefault(key, []).append(e)
    groups = {k: np.array(v, dtype=np.int64) for k, v in groups.items()}

    face_scheme = dofmap.scheme in ("dg-q1", "ccfv")
    local = (_all_element_stiffness(mesh, field)
             if dofmap.scheme != "ccfv" else None)
    if dofmap.scheme == "dg-q1":
        iface = _dg_interior_face_mats(mesh, field, penalty)
        bmats = _dg_boundary_face_mats(mesh, field, penalty,
                                       dofmap.dirichlet_faces)
    elif dofmap.scheme == "ccfv":
        t_int, t_bnd = _ccfv_transmissibilities(mesh, field)
        iface = np.empty((mesh.n_interior_faces, 2, 2))
        iface[:, 0, 0] = t_int
        iface[:, 1, 1] = t_int
        iface[:, 0, 1] = -t_int
        iface[:, 1, 0] = -t_int
        bmats = t_bnd[dofmap.dirichlet_faces].reshape(-1, 1, 1)

    bface_key = None
    if face_scheme:
        bface_key = [keys[mesh.bface_elem[f]] for f in dofmap.dirichlet_faces]

    volume = {}
    skeleton = {}
    dirichlet = {}
    skel_groups = {}
    if face_scheme:
        km = [keys[e] for e in mesh.face_minus]
        kp = [keys[e] for e in mesh.face_plus]
        same_faces = {}
        for fidx in range(mesh.n_interior_faces):
            if km[fidx] == kp[fidx]:
                same_faces.setdefault(km[fidx], []).append(fidx)
            else:
                skel_groups.setdefault((km[fidx], kp[fidx]), []).append(fidx)

    for key, elems in groups.items():
        extra = []
        if face_scheme:
            faces = np.array(same_faces.get(key, []), dtype=np.int64)
            if len(faces):
                extra.append(_face_coo(dofmap, mesh.face_minus[faces],
                                       mesh.face_plus[faces], iface[faces]))
            owned = np.array([j for j, k in enumerate(bface_key)
                              if k == key], dtype=np.int64)
            if len(owned):
                bcoo = _bface_coo(dofmap, dofmap.dirichlet_faces[owned],
                                  mesh, bmats[owned])
                extra.append(bcoo)
                dirichlet[key] = SparseSymMatrix.from_coo(
                    dofmap.n, *bcoo, validate=False)
        if dofmap.scheme == "ccfv":
            volume[key] = _scatter(dofmap, np.arange(0),
                                   np.zeros((0, 1, 1)), dofmap.n, extra=extra)
        else:
            volume[key] = _scatter(dofmap, elems, local[elems], dofmap.n,
                                   extra=extra)
    if face_scheme:
        for pair, faces in skel_groups.items():
            faces = np.array(faces, dtype=np.int64)
            extra = [_face_coo(dofmap, mesh.face_minus[faces],
                               mesh.face_plus[faces], iface[faces])]
            skeleton[pair] = _scatter(dofmap, np.arange(0),
                                      np.zeros((0, dofmap.dofs_per_elem,
                                                dofmap.dofs_per_elem)),
                                      dofmap.n, extra=extra)
    return PatchMatrixSet(level=level, dim=dofmap.n, volume=volume,
                          skeleton=skeleton, dirichlet=dirichlet)
