"""Structured axis-parallel meshes and per-element diffusion tensors.

Elements and vertices are numbered lexicographically with the x index
running fastest.  Interior face normals point from the lower-index
element tau^- to the higher-index element tau^+ (always a positive
coordinate axis on these grids); boundary face normals point outward.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CountMismatch, InvalidSpec, NonPositiveEntry

_PLANES = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")


@dataclass
class MeshTopology:
    """Structured quad/hex mesh with face topology and boundary tags."""

    d: int
    cells_per_axis: tuple
    lengths: tuple
    h: tuple
    n_elements: int
    # interior faces: tau^-, tau^+, axis (normal = +e_axis)
    face_minus: np.ndarray
    face_plus: np.ndarray
    face_axis: np.ndarray
    # boundary faces: owner element, axis, side (0 min / 1 max), dirichlet tag
    bface_elem: np.ndarray
    bface_axis: np.ndarray
    bface_side: np.ndarray
    bface_dirichlet: np.ndarray
    _elem_vertices: np.ndarray = field(repr=False, default=None)

    @property
    def n_interior_faces(self):
        return len(self.face_minus)

    @property
    def n_boundary_faces(self):
        return len(self.bface_elem)

    @property
    def n_vertices(self):
        return int(np.prod([c + 1 for c in self.cells_per_axis]))

    def interior_normals(self):
        """Unit normals of interior faces, oriented tau^- to tau^+."""
        nu = np.zeros((self.n_interior_faces, self.d))
        nu[np.arange(self.n_interior_faces), self.face_axis] = 1.0
        return nu

    def boundary_normals(self):
        nu = np.zeros((self.n_boundary_faces, self.d))
        sign = np.where(self.bface_side == 0, -1.0, 1.0)
        nu[np.arange(self.n_boundary_faces), self.bface_axis] = sign
        return nu

    def face_area(self, axis):
        """Measure of a face whose normal is the given axis."""
        return float(np.prod([self.h[a] for a in range(self.d) if a != axis]))

    @property
    def element_volume(self):
        return float(np.prod(self.h))

    def element_multi_index(self, elems):
        """(m, d) integer grid coordinates of the given element ids."""
        elems = np.asarray(elems)
        out = np.empty(elems.shape + (self.d,), dtype=np.int64)
        rem = elems
        for a in range(self.d):
            out[..., a] = rem % self.cells_per_axis[a]
            rem = rem // self.cells_per_axis[a]
        return out

    def element_centroids(self, elems=None):
        if elems is None:
            elems = np.arange(self.n_elements)
        mi = self.element_multi_index(elems)
        return (mi + 0.5) * np.asarray(self.h)

    def element_vertices(self):
        """(n_elements, 2^d) vertex ids per element, lexicographic corners."""
        if self._elem_vertices is None:
            nv = [c + 1 for c in self.cells_per_axis]
            mi = self.element_multi_index(np.arange(self.n_elements))
            corners = np.array(
                [[(k >> a) & 1 for a in range(self.d)]
                 for k in range(2 ** self.d)], dtype=np.int64)
            vid = np.zeros((self.n_elements, 2 ** self.d), dtype=np.int64)
            stride = 1
            for a in range(self.d):
                vid += (mi[:, a][:, None] + corners[None, :, a]) * stride
                stride *= nv[a]
            self._elem_vertices = vid
        return self._elem_vertices

    def metadata(self):
        return {
            "dim": self.d,
            "cells_per_axis": list(self.cells_per_axis),
            "lengths": list(self.lengths),
            "h": list(self.h),
            "elements": self.n_elements,
            "interior_faces": self.n_interior_faces,
            "boundary_faces": self.n_boundary_faces,
        }


def _parse_boundary_spec(d, boundary_spec):
    if boundary_spec is None:
        boundary_spec = ("xmin", "xmax")
    if isinstance(boundary_spec, str):
        if boundary_spec == "all-dirichlet":
            boundary_spec = _PLANES[:2 * d]
        elif boundary_spec == "all-neumann":
            boundary_spec = ()
        else:
            boundary_spec = tuple(t.strip() for t in boundary_spec.split(",")
                                  if t.strip())
    dirichlet = set()
    for tag in boundary_spec:
        if tag not in _PLANES[:2 * d]:
            raise InvalidSpec(f"unknown boundary tag {tag!r} for d={d}")
        dirichlet.add(tag)
    return dirichlet


def build_mesh(d, cells_per_axis, lengths=None, boundary_spec=None):
    """Build a structured mesh of axis-parallel quads/hexes.

    ``boundary_spec`` names the Dirichlet planes ("xmin", "xmax", ...);
    by default the two planes perpendicular to x are Dirichlet and the
    rest homogeneous Neumann.
    """
    if d not in (2, 3):
        raise InvalidSpec(f"dimension must be 2 or 3, got {d}")
    cells = tuple(int(c) for c in np.atleast_1d(cells_per_axis).repeat(
        d if np.ndim(cells_per_axis) == 0 else 1))
    if len(cells) != d:
        raise InvalidSpec("cells_per_axis length must match dimension")
    if any(c < 1 for c in cells):
        raise InvalidSpec("need at least one cell per axis")
    if lengths is None:
        lengths = (1.0,) * d
    lengths = tuple(float(x) for x in lengths)
    if len(lengths) != d or any(x <= 0 for x in lengths):
        raise InvalidSpec("invalid domain lengths")
    h = tuple(lengths[a] / cells[a] for a in range(d))
    dirichlet = _parse_boundary_spec(d, boundary_spec)

    n_elem = int(np.prod(cells))
    strides = np.cumprod((1,) + cells[:-1])

    fm, fp, fax = [], [], []
    be, ba, bs = [], [], []
    all_idx = np.arange(n_elem)
    mi = np.empty((n_elem, d), dtype=np.int64)
    rem = all_idx
    for a in range(d):
        mi[:, a] = rem % cells[a]
        rem = rem // cells[a]
    for a in range(d):
        low = mi[:, a] < cells[a] - 1
        fm.append(all_idx[low])
        fp.append(all_idx[low] + strides[a])
        fax.append(np.full(low.sum(), a, dtype=np.int64))
        at_min = mi[:, a] == 0
        be.append(all_idx[at_min])
        ba.append(np.full(at_min.sum(), a, dtype=np.int64))
        bs.append(np.zeros(at_min.sum(), dtype=np.int64))
        at_max = mi[:, a] == cells[a] - 1
        be.append(all_idx[at_max])
        ba.append(np.full(at_max.sum(), a, dtype=np.int64))
        bs.append(np.ones(at_max.sum(), dtype=np.int64))

    bface_elem = np.concatenate(be)
    bface_axis = np.concatenate(ba)
    bface_side = np.concatenate(bs)
    tag = np.zeros(len(bface_elem), dtype=bool)
    for k, plane in enumerate(_PLANES[:2 * d]):
        if plane in dirichlet:
            tag |= (bface_axis == k // 2) & (bface_side == k % 2)
    return MeshTopology(
        d=d, cells_per_axis=cells, lengths=lengths, h=h, n_elements=n_elem,
        face_minus=np.concatenate(fm), face_plus=np.concatenate(fp),
        face_axis=np.concatenate(fax),
        bface_elem=bface_elem, bface_axis=bface_axis, bface_side=bface_side,
        bface_dirichlet=tag)


@dataclass
class CoefficientField:
    """Per-element SPD diffusion tensor K, stored as (n_elements, d, d)."""

    tensors: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tensors, dtype=np.float64)
        if t.ndim != 3 or t.shape[1] != t.shape[2]:
            raise InvalidSpec("tensor array must have shape (n, d, d)")
        self.tensors = t

    @classmethod
    def constant(cls, mesh, kappa=1.0):
        t = np.tile(np.eye(mesh.d) * float(kappa), (mesh.n_elements, 1, 1))
        return cls(t)

    @classmethod
    def from_scalars(cls, mesh, kappa):
        kappa = np.asarray(kappa, dtype=np.float64)
        if kappa.shape != (mesh.n_elements,):
            raise CountMismatch("one scalar per element expected")
        t = kappa[:, None, None] * np.eye(mesh.d)[None]
        return cls(t)

    @classmethod
    def from_diagonals(cls, mesh, diag):
        diag = np.asarray(diag, dtype=np.float64)
        if diag.shape != (mesh.n_elements, mesh.d):
            raise CountMismatch("one diagonal row per element expected")
        t = np.zeros((mesh.n_elements, mesh.d, mesh.d))
        for a in range(mesh.d):
            t[:, a, a] = diag[:, a]
        return cls(t)

    def validate(self):
        t = self.tensors
        if np.abs(t - t.transpose(0, 2, 1)).max() > 0:
            raise InvalidSpec("coefficient tensors must be symmetric")
        if np.linalg.eigvalsh(t).min() <= 0:
            raise NonPositiveEntry("coefficient tensors must be SPD")

    def normal_diffusivity(self, elems, axis):
        """nu^T K nu for axis-aligned normals (delta_{K,nu} of the DG weights)."""
        return self.tensors[elems, axis, axis]


def islands_coefficient(mesh, g, inclusion_fraction, kappa_low, kappa_high):
    """Regular g x g grid of square high-coefficient inclusions.

    The inclusions sit centered in the cells of a g x g macro grid over
    the (x, y) cross-section and jointly cover ``inclusion_fraction`` of
    its area; in 3d the pattern is extruded constantly along z.
    ``g = 0`` yields the uniform field; ``kappa_high == kappa_low``
    degenerates to the homogeneous case.
    """
    if kappa_low <= 0 or kappa_high < kappa_low:
        raise InvalidSpec("need kappa_high >= kappa_low > 0")
    kappa = np.full(mesh.n_elements, float(kappa_low))
    if g > 0:
        if not 0 < inclusion_fraction <= 1:
            raise InvalidSpec("inclusion fraction must lie in (0, 1]")
        side = np.sqrt(inclusion_fraction) / g  # relative inclusion side
        c = mesh.element_centroids() / np.asarray(mesh.lengths)
        inside = np.ones(mesh.n_elements, dtype=bool)
        for a in (0, 1):
            # position within the macro cell, centered at 0
            u = np.mod(c[:, a] * g, 1.0) - 0.5
            inside &= np.abs(u) < 0.5 * side * g
        kappa[inside] = float(kappa_high)
    return CoefficientField.from_scalars(mesh, kappa)


def load_cellwise_coefficients(mesh, path):
    """Per-element diagonal tensors from a text file.

    One line per element in lexicographic order, d positive diagonal
    entries per line (a single entry is broadcast to all axes).
    """
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                rows.append([float(tok) for tok in line.split()])
    if len(rows) != mesh.n_elements:
        raise CountMismatch(
            f"{len(rows)} coefficient rows for {mesh.n_elements} elements")
    diag = np.empty((mesh.n_elements, mesh.d))
    for i, row in enumerate(rows):
        if len(row) == 1:
            diag[i, :] = row[0]
        elif len(row) == mesh.d:
            diag[i, :] = row
        else:
            raise CountMismatch(
                f"row {i}: expected 1 or {mesh.d} entries, got {len(row)}")
    if (diag <= 0).any():
        raise NonPositiveEntry("coefficient entries must be positive")
    return CoefficientField.from_diagonals(mesh, diag)


def save_cellwise_coefficients(field, path):
    """Inverse of :func:`load_cellwise_coefficients` (diagonal part only)."""
    n, d = field.tensors.shape[:2]
    with open(path, "w") as fh:
        for i in range(n):
            fh.write(" ".join(repr(float(field.tensors[i, a, a]))
                              for a in range(d)) + "\n")
