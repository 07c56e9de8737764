"""Glue between the deformation, oracle, ROM and objective modules.

:class:`HullDesign` bundles a reference hull with its FFD lattice, parameter
map, volume mesh and flow condition. Because FFD is linear in the control
displacements, the hull deformation for any ``mu`` is a precomputed
displacement basis contracted with ``mu``; batches of designs are deformed,
evaluated and integrated without Python-level loops over vertices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ffd import ParameterVector, build_dtc_lattice, ffd_displacement_basis
from .fixtures import hull_fixture, volume_fixture
from .fom import SyntheticFomSpec, _incidence, synthetic_fields_batch
from .objective import HullCondition, compute_ct_batch
from .rbf_morph import RbfConfig, RbfSystem, default_radius, morph_volume_mesh

__all__ = ["HullDesign", "default_design"]


@dataclass(eq=False)
class HullDesign:
    hull: object
    lattice: object
    pmap: object
    volume: object = None
    spec: SyntheticFomSpec = field(default_factory=SyntheticFomSpec)
    cond: HullCondition = field(default_factory=HullCondition)
    bounds: tuple = (-0.2, 0.2)
    rbf: RbfConfig = field(default_factory=RbfConfig)

    def __post_init__(self):
        self.basis = ffd_displacement_basis(self.hull.vertices, self.lattice, self.pmap)
        self.n_params = self.pmap.n_params
        lo = np.broadcast_to(np.asarray(self.bounds[0], float), (self.n_params,)).copy()
        hi = np.broadcast_to(np.asarray(self.bounds[1], float), (self.n_params,)).copy()
        self.lower, self.upper = lo, hi
        self._incidence = _incidence(self.hull.triangles, self.hull.n_vertices)
        self._system = None

    # parameter handling
    def to_genes(self, mu):
        mu = np.asarray(mu, dtype=float)
        return 2.0 * (mu - self.lower) / (self.upper - self.lower) - 1.0

    def from_genes(self, genes):
        genes = np.asarray(genes, dtype=float)
        return np.clip(self.lower + 0.5 * (genes + 1.0) * (self.upper - self.lower), self.lower, self.upper)

    def parameter_vector(self, mu):
        return ParameterVector(mu, self.lower, self.upper)

    # geometry
    def deform_vertices(self, mus):
        """Deformed hull vertices, ``(b, m, 3)`` for ``(b, p)`` input."""
        mus = np.atleast_2d(np.asarray(mus, dtype=float))
        # fixed-order accumulation: BLAS rounding would depend on the batch size
        out = np.repeat(self.hull.vertices[None], len(mus), axis=0)
        for k in range(self.n_params):
            out += mus[:, k, None, None] * self.basis[k]
        return out

    def deform(self, mu):
        return self.hull.with_vertices(self.deform_vertices(mu)[0])

    @property
    def rbf_radius(self):
        """Fixed kernel radius covering every node any parameter can move."""
        if self.rbf.radius is not None:
            return self.rbf.radius
        support = np.abs(self.basis).sum(axis=0)
        return default_radius(self.hull.vertices, support)

    def rbf_system(self):
        if self._system is None:
            idx = np.arange(0, self.hull.n_vertices, int(self.rbf.subsample)) if np.isscalar(
                self.rbf.subsample) else None
            ctrl = self.hull.vertices if idx is None else self.hull.vertices[idx]
            self._system = RbfSystem(ctrl, self.rbf_radius, self.rbf.pivot_tolerance, self.rbf.jitter)
        return self._system

    def morph(self, mu):
        """Morphed volume mesh and its quality report."""
        if self.volume is None:
            raise ValueError("design has no volume mesh")
        cfg = RbfConfig(radius=self.rbf_radius, subsample=self.rbf.subsample,
                        pivot_tolerance=self.rbf.pivot_tolerance, jitter=self.rbf.jitter)
        system = self.rbf_system() if np.isscalar(self.rbf.subsample) else None
        return morph_volume_mesh(self.volume, self.hull, self.deform(mu), cfg, system)

    # fields and objective
    def fom_fields(self, mus):
        """Oracle ``(pressure (b, m), shear (b, m, 3))`` on the deformed hulls."""
        mus = np.atleast_2d(np.asarray(mus, dtype=float))
        return synthetic_fields_batch(self.deform_vertices(mus), self.hull.triangles, self.to_genes(mus),
                                      self.spec, self.cond, self._incidence)

    def ct_from_fields(self, mus, pressure, shear_x):
        """C_t breakdown of fields carried onto the hulls deformed by ``mus``."""
        return compute_ct_batch(self.deform_vertices(mus), self.hull.triangles, pressure, shear_x, self.cond)

    def fom_ct(self, mus, batch=256, breakdown=False):
        """Oracle C_t for a batch of parameter vectors."""
        mus = np.atleast_2d(np.asarray(mus, dtype=float))
        parts = []
        for start in range(0, len(mus), batch):
            m = mus[start:start + batch]
            p, tau = self.fom_fields(m)
            parts.append(self.ct_from_fields(m, p, tau[..., 0]))
        out = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
        return out if breakdown else out["ct"]

    def rom_ct(self, roms, mus, batch=256, breakdown=False):
        """C_t from ROM-predicted fields projected onto the deformed hulls."""
        mus = np.atleast_2d(np.asarray(mus, dtype=float))
        m = self.hull.n_vertices
        parts = []
        for start in range(0, len(mus), batch):
            q = mus[start:start + batch]
            p = roms["pressure"].predict(q).reshape(len(q), m)
            tau = roms["shear"].predict(q).reshape(len(q), m, 3)
            parts.append(self.ct_from_fields(q, p, tau[..., 0]))
        out = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
        return out if breakdown else out["ct"]


def default_design(with_volume=True, spec=None, cond=None, rbf=None):
    """Bundled desk-scale hull, prow lattice and O-grid volume mesh."""
    hull = hull_fixture()
    cond = cond or HullCondition()
    lattice, pmap = build_dtc_lattice(hull, waterline_z=cond.waterline_z)
    return HullDesign(hull, lattice, pmap, volume_fixture() if with_volume else None,
                      spec or SyntheticFomSpec(), cond, rbf=rbf or RbfConfig())
