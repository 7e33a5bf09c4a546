"""Shared helpers: small assembled problems with decompositions."""

import numpy as np
import pytest

from mlsdd.assembly import (assemble, build_dofmap, build_patches,
                            compute_penalties)
from mlsdd.hierarchy import build_hierarchy, build_pou
from mlsdd.mesh import CoefficientField, build_mesh, islands_coefficient
from mlsdd.spectral import finest_spectral_level


class Case:
    """Everything a decomposition-level test needs, built in one go."""

    def __init__(self, cells, scheme="cg-q1", subdomains=(4,), delta=1,
                 field="constant", contrast=1e6, boundary=None,
                 islands_grid=4, islands_fraction=1 / 16, d=2):
        self.mesh = build_mesh(d, cells, boundary_spec=boundary)
        if field == "constant":
            self.field = CoefficientField.constant(self.mesh, 1.0)
        else:
            self.field = islands_coefficient(
                self.mesh, islands_grid, islands_fraction, 1.0, contrast)
        self.scheme = scheme
        self.dofmap = build_dofmap(self.mesh, scheme)
        self.penalty = None
        if scheme == "dg-q1":
            self.penalty = compute_penalties(self.mesh, self.field)
        self.a, self.rhs = assemble(self.mesh, self.field, self.dofmap,
                                    penalty=self.penalty)
        self.hierarchy = build_hierarchy(self.mesh, list(subdomains), delta,
                                         scheme=scheme)
        nl = self.hierarchy.num_levels
        self.pou = build_pou(self.mesh, self.dofmap,
                             self.hierarchy.levels[nl].elem_sets, delta,
                             level=nl)
        self.patches = build_patches(self.mesh, self.field, self.dofmap,
                                     self.hierarchy.levels[nl].elem_sets,
                                     penalty=self.penalty, level=nl)

    def finest_level(self):
        return finest_spectral_level(self.a, self.patches, self.pou,
                                     level=self.hierarchy.num_levels)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
