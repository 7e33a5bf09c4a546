"""Multilevel overlapping domain decomposition.

The finest level partitions the mesh into seed sets by recursive
coordinate bisection (deterministic: split axis = longest box extent,
median split by centroid then element id), grows each seed by ``delta``
layers of node-adjacent elements, and checks admissibility (every
interior face interior to at least one subdomain).  Coarser levels
partition the subdomain index sets the same way on seed centroids.

The partition of unity assigns each dof (CG) or element (DG/CCFV) a
chain of power-of-two weights over its owners, ascending in subdomain
index: (2^{1-m}, 2^{1-m}, 2^{2-m}, ..., 1/2).  Every partial sum in the
fixed ascending-order scatter is then exactly representable, so
sum_i e_i chi_i r_i v reproduces v bit-exactly.  CG owners are the
subdomains in which the dof is strictly interior, which makes the
weights vanish on inner subdomain boundaries by construction.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import AdmissibilityViolated, InvalidSpec, ZeroWeightDof


# -- partitioning -------------------------------------------------------

def recursive_coordinate_bisection(points, n_parts):
    """Balanced RCB part assignment (sizes differ by at most one)."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n_parts < 1 or n_parts > n:
        raise InvalidSpec(f"cannot split {n} items into {n_parts} parts")
    parts = np.zeros(n, dtype=np.int64)
    base, rem = divmod(n, n_parts)
    sizes = [base + 1] * rem + [base] * (n_parts - rem)

    def rec(idx, sizes, offset):
        if len(sizes) == 1:
            parts[idx] = offset
            return
        half = len(sizes) // 2
        n_left = sum(sizes[:half])
        box = points[idx].max(axis=0) - points[idx].min(axis=0)
        axis = int(np.argmax(box))
        order = np.lexsort((idx, points[idx, axis]))
        rec(idx[order[:n_left]], sizes[:half], offset)
        rec(idx[order[n_left:]], sizes[half:], offset + half)

    rec(np.arange(n, dtype=np.int64), sizes, 0)
    return parts


def _grow_by_nodes(mesh, mask, layers):
    """Grow an element mask by node-adjacent element layers."""
    ev = mesh.element_vertices()
    nv = mesh.n_vertices
    for _ in range(layers):
        vmask = np.zeros(nv, dtype=bool)
        vmask[ev[mask].reshape(-1)] = True
        mask = mask | vmask[ev].any(axis=1)
    return mask


def check_admissibility(mesh, elem_sets):
    """Every interior face must be interior to at least one subdomain."""
    ok = np.zeros(mesh.n_interior_faces, dtype=bool)
    for elems in elem_sets:
        m = np.zeros(mesh.n_elements, dtype=bool)
        m[elems] = True
        ok |= m[mesh.face_minus] & m[mesh.face_plus]
    if not ok.all():
        f = int(np.where(~ok)[0][0])
        raise AdmissibilityViolated(
            f"interior face {f} (elements {mesh.face_minus[f]}, "
            f"{mesh.face_plus[f]}) is interior to no subdomain; "
            "increase the overlap", face=f)


def partition_fine(mesh, n_subdomains, delta):
    """Seed partition plus ``delta`` layers of overlap.

    Returns (seeds, elem_sets); raises AdmissibilityViolated when some
    interior face ends up interior to no subdomain.
    """
    if n_subdomains < 1:
        raise InvalidSpec("need at least one subdomain")
    if delta < 0:
        raise InvalidSpec("overlap must be nonnegative")
    assign = recursive_coordinate_bisection(
        mesh.element_centroids(), n_subdomains)
    seeds, elem_sets = [], []
    for i in range(n_subdomains):
        seed = np.where(assign == i)[0]
        seeds.append(seed)
        mask = np.zeros(mesh.n_elements, dtype=bool)
        mask[seed] = True
        mask = _grow_by_nodes(mesh, mask, delta)
        elem_sets.append(np.where(mask)[0])
    check_admissibility(mesh, elem_sets)
    return seeds, elem_sets


def partition_coarse(points, n_parts):
    """Index sets J grouping the next-finer subdomains (nonoverlapping).

    ``points`` are representative coordinates (seed centroids) of the
    finer subdomains.  ``n_parts == len(points)`` yields the identity.
    """
    n = len(points)
    if n_parts > n:
        raise InvalidSpec("coarse level cannot have more subdomains")
    if n_parts == n:
        return [np.array([i], dtype=np.int64) for i in range(n)]
    assign = recursive_coordinate_bisection(points, n_parts)
    return [np.where(assign == i)[0] for i in range(n_parts)]


def build_face_sets(mesh, elem_sets):
    """Per-subdomain interior / boundary face id lists.

    A face is in F^I of a subdomain iff both adjacent elements belong to
    it; boundary faces follow their owner element.
    """
    interior, boundary = [], []
    for elems in elem_sets:
        m = np.zeros(mesh.n_elements, dtype=bool)
        m[elems] = True
        interior.append(np.where(m[mesh.face_minus] & m[mesh.face_plus])[0])
        boundary.append(np.where(m[mesh.bface_elem])[0])
    return interior, boundary


def color_level(mesh, elem_sets, scheme="cg-q1"):
    """Greedy coloring of the subdomain interaction graph.

    Subdomains interact if they share an element; face-coupled schemes
    (DG, CCFV) additionally interact across shared faces.
    """
    p = len(elem_sets)
    owners = [[] for _ in range(mesh.n_elements)]
    for i, elems in enumerate(elem_sets):
        for e in elems:
            owners[int(e)].append(i)
    adj = [set() for _ in range(p)]
    for lst in owners:
        for a in lst:
            for b in lst:
                if a != b:
                    adj[a].add(b)
    if scheme in ("dg-q1", "ccfv"):
        for f in range(mesh.n_interior_faces):
            for a in owners[mesh.face_minus[f]]:
                for b in owners[mesh.face_plus[f]]:
                    if a != b:
                        adj[a].add(b)
                        adj[b].add(a)
    colors = np.full(p, -1, dtype=np.int64)
    for i in range(p):
        used = {colors[j] for j in adj[i] if colors[j] >= 0}
        c = 0
        while c in used:
            c += 1
        colors[i] = c
    return colors, int(colors.max()) + 1


# -- partition of unity ---------------------------------------------------

def _chain_weights(count):
    """Power-of-two weights summing to one, exact under ascending summation."""
    if count == 1:
        return [1.0]
    w = [2.0 ** (1 - count)]
    w += [2.0 ** (t - count) for t in range(1, count)]
    return w


@dataclass
class PartitionOfUnity:
    """Per-subdomain dof lists, PoU weights and interior markers.

    ``weights[i]`` are the chi values over ``dof_lists[i]``;
    ``interior[i]`` flags dofs spanning the Dirichlet subspace of the
    subdomain (strictly interior for CG, all dofs for face schemes).
    """

    level: int
    n_dofs: int
    dof_lists: list
    weights: list
    interior: list

    def apply_sum(self, v):
        """sum_i e_i chi_i r_i v, accumulated in ascending subdomain order."""
        out = np.zeros_like(v)
        for dofs, w in zip(self.dof_lists, self.weights):
            out[dofs] += w * v[dofs]
        return out


def _cg_distances(mesh, dofmap, elems, delta):
    """Per-dof element-layer distance from the inner subdomain boundary."""
    ev = mesh.element_vertices()
    nv = mesh.n_vertices
    total_inc = np.zeros(nv, dtype=np.int64)
    np.add.at(total_inc, ev.reshape(-1), 1)
    in_sub = np.zeros(mesh.n_elements, dtype=bool)
    in_sub[elems] = True
    sub_inc = np.zeros(nv, dtype=np.int64)
    np.add.at(sub_inc, ev[elems].reshape(-1), 1)
    sub_vert = sub_inc > 0
    dist = np.full(nv, -1, dtype=np.int64)
    frontier = sub_vert & (sub_inc < total_inc)
    dist[frontier] = 0
    for layer in range(1, delta + 1):
        touched = in_sub & frontier[ev].any(axis=1)
        newly = np.zeros(nv, dtype=bool)
        newly[ev[touched].reshape(-1)] = True
        newly &= sub_vert & (dist < 0)
        if not newly.any():
            break
        dist[newly] = layer
        frontier = newly
    dist[sub_vert & (dist < 0)] = delta
    return dist, sub_vert


def build_pou(mesh, dofmap, elem_sets, delta, level=1):
    """Partition of unity on the finest level.

    CG: a dof is owned by the subdomains it is strictly interior to
    (positive layer distance); DG/CCFV: per-element ownership.  Owners
    receive the exact power-of-two weight chain in ascending subdomain
    order.  Raises ZeroWeightDof when some dof has no owner.
    """
    p = len(elem_sets)
    if dofmap.scheme == "cg-q1":
        dof_lists, interior, dists = [], [], []
        for elems in elem_sets:
            dist, sub_vert = _cg_distances(mesh, dofmap, elems, delta)
            dofs_mask = sub_vert.copy()
            dofs_mask[dofmap.vertex_dof < 0] = False
            verts = np.where(dofs_mask)[0]
            dof_lists.append(dofmap.vertex_dof[verts])
            interior.append(dist[verts] > 0)
            dists.append(dist[verts])
        owners = [[] for _ in range(dofmap.n)]
        for i in range(p):
            for dof, d_ in zip(dof_lists[i], dists[i]):
                if d_ > 0:
                    owners[dof].append(i)
        weights = [np.zeros(len(dof_lists[i])) for i in range(p)]
        pos_of = [dict(zip(dof_lists[i].tolist(), range(len(dof_lists[i]))))
                  for i in range(p)]
        for dof, lst in enumerate(owners):
            if not lst:
                raise ZeroWeightDof(
                    f"dof {dof} is strictly interior to no subdomain "
                    f"(delta={delta} too small)")
            chain = _chain_weights(len(lst))
            for w, i in zip(chain, lst):
                weights[i][pos_of[i][dof]] = w
        return PartitionOfUnity(level=level, n_dofs=dofmap.n,
                                dof_lists=dof_lists, weights=weights,
                                interior=interior)
    # face schemes: per-element weights replicated over element dofs
    owners = [[] for _ in range(mesh.n_elements)]
    for i, elems in enumerate(elem_sets):
        for e in elems:
            owners[int(e)].append(i)
    elem_w = [np.zeros(mesh.n_elements) for _ in range(p)]
    for e, lst in enumerate(owners):
        if not lst:
            raise ZeroWeightDof(f"element {e} belongs to no subdomain")
        for w, i in zip(_chain_weights(len(lst)), lst):
            elem_w[i][e] = w
    dof_lists, weights, interior = [], [], []
    m = dofmap.dofs_per_elem
    for i, elems in enumerate(elem_sets):
        dofs = dofmap.elem_dofs[elems].reshape(-1)
        dof_lists.append(dofs)
        weights.append(np.repeat(elem_w[i][elems], m))
        interior.append(np.ones(len(dofs), dtype=bool))
    return PartitionOfUnity(level=level, n_dofs=dofmap.n,
                            dof_lists=dof_lists, weights=weights,
                            interior=interior)


# -- hierarchy ------------------------------------------------------------

@dataclass
class LevelDecomposition:
    level: int
    elem_sets: list
    seeds: list = None
    index_sets: list = None
    interior_faces: list = None
    boundary_faces: list = None
    colors: np.ndarray = None
    k0: int = 0

    @property
    def n_subdomains(self):
        return len(self.elem_sets)


@dataclass
class Hierarchy:
    """Levels 1..L of the decomposition (level 0 is the single coarse domain).

    ``levels[l]`` holds level ``l``; level L is the finest.
    """

    mesh: object
    delta: int
    levels: dict
    scheme: str

    @property
    def num_levels(self):
        """L: number of subdomain-carrying levels."""
        return max(self.levels)

    @property
    def k0(self):
        return max(info.k0 for info in self.levels.values())

    def validate(self):
        """Covering, nestedness, admissibility and coloring validity."""
        mesh = self.mesh
        n_le = mesh.n_elements
        for l, info in self.levels.items():
            cover = np.zeros(n_le, dtype=bool)
            for elems in info.elem_sets:
                cover[elems] = True
            if not cover.all():
                raise InvalidSpec(f"level {l} does not cover the mesh")
            check_admissibility(mesh, info.elem_sets)
            if info.index_sets is not None:
                finer = self.levels[l + 1].elem_sets
                union = set()
                for i, j_set in enumerate(info.index_sets):
                    expect = np.unique(np.concatenate(
                        [finer[j] for j in j_set]))
                    if not np.array_equal(expect, info.elem_sets[i]):
                        raise InvalidSpec(
                            f"nestedness violated at level {l}, subdomain {i}")
                    union.update(int(j) for j in j_set)
                if union != set(range(len(finer))):
                    raise InvalidSpec(f"index sets at level {l} not covering")
            # coloring validity: same color implies no shared element (or face)
            masks = []
            for elems in info.elem_sets:
                m = np.zeros(n_le, dtype=bool)
                m[elems] = True
                masks.append(m)
            for i in range(info.n_subdomains):
                for j in range(i + 1, info.n_subdomains):
                    if info.colors[i] != info.colors[j]:
                        continue
                    if (masks[i] & masks[j]).any():
                        raise InvalidSpec(
                            f"level {l}: same-color subdomains {i},{j} "
                            "share an element")
                    if self.scheme in ("dg-q1", "ccfv"):
                        fm, fp = mesh.face_minus, mesh.face_plus
                        if ((masks[i][fm] & masks[j][fp])
                                | (masks[j][fm] & masks[i][fp])).any():
                            raise InvalidSpec(
                                f"level {l}: same-color subdomains {i},{j} "
                                "share a face")

    def summary(self):
        return {
            "levels": self.num_levels,
            "delta": self.delta,
            "subdomains": {l: info.n_subdomains
                           for l, info in self.levels.items()},
            "k0": {l: info.k0 for l, info in self.levels.items()},
            "overlap_elements": {
                l: int(sum(len(e) for e in info.elem_sets))
                for l, info in self.levels.items()},
        }


def build_hierarchy(mesh, p_levels, delta, scheme="cg-q1",
                    fine_elem_sets=None, fine_seeds=None):
    """Build levels L..1 for subdomain counts ``p_levels`` (finest first).

    ``fine_elem_sets``/``fine_seeds`` inject an externally supplied finest
    partition (parity hook); otherwise RCB + overlap growth is used.
    """
    p_levels = list(p_levels)
    if any(p_levels[i] < p_levels[i + 1] for i in range(len(p_levels) - 1)):
        raise InvalidSpec("subdomain counts must be nonincreasing toward "
                          "the coarse level")
    if p_levels and p_levels[-1] < 1:
        raise InvalidSpec("subdomain counts must be positive")
    n_levels = len(p_levels)
    levels = {}
    if fine_elem_sets is None:
        fine_seeds, fine_elem_sets = partition_fine(mesh, p_levels[0], delta)
    else:
        check_admissibility(mesh, fine_elem_sets)
        if fine_seeds is None:
            fine_seeds = fine_elem_sets
    elem_sets = fine_elem_sets
    seeds = fine_seeds
    for k, p in enumerate(p_levels):
        level = n_levels - k
        if k > 0:
            centroids = np.array([mesh.element_centroids(s).mean(axis=0)
                                  for s in seeds])
            index_sets = partition_coarse(centroids, p)
            elem_sets = [np.unique(np.concatenate([elem_sets[j]
                                                   for j in j_set]))
                         for j_set in index_sets]
            seeds = [np.unique(np.concatenate([seeds[j] for j in j_set]))
                     for j_set in index_sets]
        else:
            index_sets = None
        fi, fb = build_face_sets(mesh, elem_sets)
        colors, k0 = color_level(mesh, elem_sets, scheme)
        levels[level] = LevelDecomposition(
            level=level, elem_sets=elem_sets,
            seeds=seeds if k == 0 else None,
            index_sets=index_sets, interior_faces=fi, boundary_faces=fb,
            colors=colors, k0=k0)
    return Hierarchy(mesh=mesh, delta=delta, levels=levels, scheme=scheme)


# -- import / export -------------------------------------------------------

def export_fine_partition(path, mesh, elem_sets):
    """One line per element listing the subdomains that own it."""
    owners = [[] for _ in range(mesh.n_elements)]
    for i, elems in enumerate(elem_sets):
        for e in elems:
            owners[int(e)].append(i)
    with open(path, "w") as fh:
        for lst in owners:
            fh.write(" ".join(str(i) for i in sorted(lst)) + "\n")


def import_fine_partition(path, mesh):
    owners = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            owners.append([int(t) for t in line.split()] if line else [])
    if len(owners) != mesh.n_elements:
        raise InvalidSpec("partition file row count mismatch")
    p = max((max(o) for o in owners if o), default=-1) + 1
    elem_sets = [[] for _ in range(p)]
    for e, lst in enumerate(owners):
        for i in lst:
            elem_sets[i].append(e)
    return [np.array(sorted(s), dtype=np.int64) for s in elem_sets]


def export_index_sets(path, index_sets):
    """One line per coarse subdomain listing its member indices."""
    with open(path, "w") as fh:
        for j_set in index_sets:
            fh.write(" ".join(str(int(j)) for j in j_set) + "\n")


def export_summary(path, hierarchy):
    with open(path, "w") as fh:
        json.dump(hierarchy.summary(), fh, indent=2, default=int)
