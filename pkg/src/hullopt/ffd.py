"""Free-form deformation with tensor-product Bernstein polynomials.

A point inside the lattice box is mapped to the unit cube (``psi``), displaced
by the Bernstein-weighted control displacements and mapped back
(``psi_inverse``). Points outside the box are left untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "bernstein",
    "bernstein_basis",
    "FfdLattice",
    "ParameterVector",
    "MapEntry",
    "DtcParameterMap",
    "dtc_parameter_map",
    "apply_parameter_map",
    "ffd_deform",
    "ffd_displacement_basis",
    "build_dtc_lattice",
    "DTC_SECTIONS",
]

DTC_SECTIONS = (10, 12, 14, 16, 18, 20, 22)
_AXES = {"x": 0, "y": 1, "z": 2}


def bernstein(i, n, t):
    """Bernstein polynomial ``C(n, i) t^i (1 - t)^(n - i)``."""
    if not 0 <= i <= n:
        raise ValueError(f"index {i} outside [0, {n}]")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t = {t} outside [0, 1]")
    return comb(n, i) * t**i * (1.0 - t) ** (n - i)


def bernstein_basis(n, t):
    """All degree-``n`` Bernstein polynomials at ``t``; shape ``t.shape + (n + 1,)``."""
    t = np.asarray(t, dtype=float)[..., None]
    i = np.arange(n + 1)
    coef = np.array([comb(n, k) for k in i], dtype=float)
    return coef * t**i * (1.0 - t) ** (n - i)


@dataclass(frozen=True, eq=False)
class FfdLattice:
    """Control-point lattice over the box ``origin + [0,1]^3 @ axes``.

    ``axes`` holds the three edge vectors as rows. ``displacements`` has shape
    ``counts + (3,)`` and is expressed in lattice-relative units: component
    ``c`` is a fraction of the edge ``axes[c]``.
    """

    origin: np.ndarray
    axes: np.ndarray
    counts: tuple
    displacements: np.ndarray = None

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(3)
        axes = np.asarray(self.axes, dtype=float).reshape(3, 3)
        counts = tuple(int(c) for c in self.counts)
        if len(counts) != 3 or min(counts) < 2:
            raise ConfigurationError("lattice needs at least 2 control points per axis")
        if abs(np.linalg.det(axes)) <= 1e-12 * np.prod(np.linalg.norm(axes, axis=1)):
            raise ConfigurationError("lattice axes are linearly dependent")
        disp = (np.zeros(counts + (3,)) if self.displacements is None
                else np.array(self.displacements, dtype=float))
        if disp.shape != counts + (3,):
            raise ConfigurationError(f"displacements must have shape {counts + (3,)}, got {disp.shape}")
        for a in (origin, axes, disp):
            a.flags.writeable = False
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "displacements", disp)

    @property
    def n_control_points(self):
        return int(np.prod(self.counts))

    def psi(self, points):
        """Physical -> reference (unit cube) coordinates."""
        return np.linalg.solve(self.axes.T, (np.asarray(points, float) - self.origin).T).T

    def psi_inverse(self, ref):
        return self.origin + np.asarray(ref, float) @ self.axes

    def control_points(self):
        grids = np.meshgrid(*[np.linspace(0, 1, c) for c in self.counts], indexing="ij")
        return self.psi_inverse(np.stack(grids, axis=-1))

    def with_displacements(self, displacements):
        return FfdLattice(self.origin, self.axes, self.counts, displacements)


def _weights(lattice, ref):
    l, m, n = (c - 1 for c in lattice.counts)
    return bernstein_basis(l, ref[:, 0]), bernstein_basis(m, ref[:, 1]), bernstein_basis(n, ref[:, 2])


def ffd_deform(points, lattice):
    """Deform points through the lattice; points outside the box are returned unchanged."""
    points = np.asarray(points, dtype=float)
    out = points.copy()
    if not np.any(lattice.displacements):
        return out
    ref = lattice.psi(points.reshape(-1, 3))
    inside = np.all((ref >= 0.0) & (ref <= 1.0), axis=1)
    if not inside.any():
        return out
    bx, by, bz = _weights(lattice, ref[inside])
    dref = np.einsum("pi,pj,pk,ijkc->pc", bx, by, bz, lattice.displacements, optimize=True)
    flat = out.reshape(-1, 3)
    flat[inside] = lattice.psi_inverse(ref[inside] + dref)
    return out


@dataclass(frozen=True)
class ParameterVector:
    """Design parameters inside a box, by default ``[-0.2, 0.2]^p``."""

    values: np.ndarray
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        lo = np.full(v.shape, -0.2) if self.lower is None else np.broadcast_to(
            np.asarray(self.lower, float), v.shape).copy()
        hi = np.full(v.shape, 0.2) if self.upper is None else np.broadcast_to(
            np.asarray(self.upper, float), v.shape).copy()
        if np.any(lo >= hi):
            raise ValueError("lower bounds must be below upper bounds")
        if not np.all(np.isfinite(v)):
            raise ValueError("parameter values must be finite")
        if np.any(v < lo) or np.any(v > hi):
            raise ValueError(f"parameters {v} outside bounds")
        for a in (v, lo, hi):
            a.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def __len__(self):
        return len(self.values)

    def to_genes(self):
        """Affine map of the box onto ``[-1, 1]^p``."""
        return 2.0 * (self.values - self.lower) / (self.upper - self.lower) - 1.0

    @classmethod
    def from_genes(cls, genes, lower=-0.2, upper=0.2):
        genes = np.asarray(genes, dtype=float)
        lo = np.broadcast_to(np.asarray(lower, float), genes.shape)
        hi = np.broadcast_to(np.asarray(upper, float), genes.shape)
        values = lo + 0.5 * (genes + 1.0) * (hi - lo)
        return cls(np.clip(values, lo, hi), lo, hi)


@dataclass(frozen=True)
class MapEntry:
    """Lattice index ranges (inclusive) driven by ``sign * mu[param]`` along ``axis``."""

    x: tuple
    y: tuple
    z: tuple
    param: int
    sign: float
    axis: str

    def __post_init__(self):
        for name in ("x", "y", "z"):
            r = getattr(self, name)
            r = (int(r), int(r)) if np.isscalar(r) else (int(r[0]), int(r[1]))
            object.__setattr__(self, name, r)
        if self.axis not in _AXES:
            raise ConfigurationError(f"axis must be one of x, y, z, got {self.axis!r}")

    def index(self):
        return tuple(slice(lo, hi + 1) for lo, hi in (self.x, self.y, self.z))


@dataclass(frozen=True)
class DtcParameterMap:
    """Parameter -> control-point displacement table.

    ``frozen`` lists lattice layers (per axis) that must keep zero displacement.
    """

    entries: tuple
    n_params: int
    frozen: dict = field(default_factory=lambda: {"x": (0, 1, 6), "z": (0, 1, 5, 6)})

    def validate(self, counts):
        for e in self.entries:
            for name, (lo, hi), c in zip("xyz", (e.x, e.y, e.z), counts):
                if not 0 <= lo <= hi < c:
                    raise ConfigurationError(f"{name}-range {lo}-{hi} outside lattice of {c} layers")
            if not 0 <= e.param < self.n_params:
                raise ConfigurationError(f"parameter index {e.param} >= {self.n_params}")
            for name, layers in self.frozen.items():
                lo, hi = getattr(e, name)
                hit = [k for k in layers if lo <= k <= hi]
                if hit:
                    raise ConfigurationError(
                        f"entry for mu_{e.param} touches frozen {name}-layer(s) {hit}")
        ny = counts[1] - 1
        ys = {(e.x, e.y, e.z, e.param, e.sign) for e in self.entries if e.axis == "y"}
        for x, y, z, p, s in ys:
            mirror = (x, (ny - y[1], ny - y[0]), z, p, -s)
            if mirror not in ys:
                raise ConfigurationError(
                    f"y-displacement of mu_{p} at y={y} lacks its antisymmetric mirror")


def dtc_parameter_map():
    """The 10-parameter table for a 7 x 11 x 7 prow lattice."""
    rows = [
        (2, 0, (2, 4), 0, 1, "x"), (2, 10, (2, 4), 0, 1, "x"),
        (3, 0, (2, 4), 1, 1, "x"), (3, 10, (2, 4), 1, 1, "x"),
        (4, 0, (2, 4), 2, 1, "x"), (4, 10, (2, 4), 2, 1, "x"),
        (4, (2, 4), 2, 3, 1, "y"), (4, (6, 8), 2, 3, -1, "y"),
        (4, (2, 4), 3, 4, 1, "y"), (4, (6, 8), 3, 4, -1, "y"),
        (4, (2, 4), 4, 5, 1, "y"), (4, (6, 8), 4, 5, -1, "y"),
        (3, (2, 4), 2, 6, 1, "y"), (3, (6, 8), 2, 6, -1, "y"),
        (5, (2, 4), 3, 7, 1, "y"), (5, (6, 8), 3, 7, -1, "y"),
        (4, (0, 1), 2, 8, 1, "z"), (4, (9, 10), 2, 8, 1, "z"),
        (5, 0, 3, 9, 1, "z"), (5, 10, 3, 9, 1, "z"),
    ]
    return DtcParameterMap(tuple(MapEntry(*r) for r in rows), 10)


def apply_parameter_map(pmap, mu, lattice):
    """Return ``lattice`` with displacements set from ``mu`` (all others zero)."""
    values = np.asarray(getattr(mu, "values", mu), dtype=float)
    if values.shape != (pmap.n_params,):
        raise ConfigurationError(f"expected {pmap.n_params} parameters, got {values.shape}")
    pmap.validate(lattice.counts)
    disp = np.zeros(lattice.counts + (3,))
    for e in pmap.entries:
        disp[e.index() + (_AXES[e.axis],)] = e.sign * values[e.param]
    return lattice.with_displacements(disp)


def ffd_displacement_basis(points, lattice, pmap):
    """Displacement of ``points`` per unit of each parameter, shape ``(p, n, 3)``.

    FFD is linear in the control displacements, so
    ``deformed = points + tensordot(mu, basis, 1)`` reproduces
    :func:`ffd_deform` for any ``mu``.
    """
    points = np.asarray(points, dtype=float)
    basis = np.zeros((pmap.n_params,) + points.shape)
    for k in range(pmap.n_params):
        unit = np.zeros(pmap.n_params)
        unit[k] = 1.0
        basis[k] = ffd_deform(points, apply_parameter_map(pmap, unit, lattice)) - points
    return basis


def build_dtc_lattice(hull, sections=DTC_SECTIONS, n_stations=21, waterline_z=0.0):
    """Place the 7 x 11 x 7 prow lattice on a hull and return it with its parameter map.

    Stations ``1..n_stations`` split the hull length into equal chunks, stern to
    bow; one extra virtual station ahead of the bow is allowed.

    * x: one layer per entry of ``sections``;
    * y: 11 layers, the 2nd and 10th on the lateral walls;
    * z: 7 layers, the 2nd on the keel and the 5th on the waterline.
    """
    lo, hi = hull.bbox
    length = hi[0] - lo[0]
    if length <= 0 or hi[1] <= lo[1] or waterline_z <= lo[2]:
        raise ConfigurationError("hull bounding box is degenerate or above the waterline")
    sections = np.asarray(sections, dtype=float)
    if len(sections) != 7:
        raise ConfigurationError("the DTC layout needs 7 x-sections")
    if sections.min() < 1 or sections.max() > n_stations + 1:
        raise ConfigurationError(f"sections must lie in [1, {n_stations + 1}]")
    steps = np.diff(sections)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0]):
        raise ConfigurationError("sections must be increasing and equispaced")
    chunk = length / (n_stations - 1)
    x0 = lo[0] + (sections[0] - 1) * chunk
    x1 = lo[0] + (sections[-1] - 1) * chunk

    dy = (hi[1] - lo[1]) / 8.0
    y0, y1 = lo[1] - dy, hi[1] + dy
    dz = (waterline_z - lo[2]) / 3.0
    z0, z1 = lo[2] - dz, waterline_z + 2 * dz

    lattice = FfdLattice([x0, y0, z0], np.diag([x1 - x0, y1 - y0, z1 - z0]), (7, 11, 7))
    pmap = dtc_parameter_map()
    pmap.validate(lattice.counts)
    return lattice, pmap
