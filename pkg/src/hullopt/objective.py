"""Total resistance coefficient of a hull from surface pressure and shear.

    C_t = (rho * int tau_x dA - int p n_x dA) / (0.5 rho V^2 Delta^(2/3))

The integrals run over the wetted part of the hull (clipped at the
waterline) with a one-point rule per clipped triangle and vertex-averaged
field values. ``Delta`` is the immersed volume from the same clipped surface,
so hulls cannot gain by shedding displacement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BindingError, ObjectiveError
from .geometry import NodalField, WatertightError, _clipped_integrals, _volume_from_clipped

__all__ = ["HullCondition", "CtBreakdown", "compute_ct", "compute_ct_batch", "project_fields"]

_BATCH = 32


@dataclass(frozen=True)
class HullCondition:
    """Fluid density (kg/m^3), reference speed (m/s) and waterline height (m)."""

    rho: float = 998.8
    speed: float = 1.668
    waterline_z: float = 0.0

    def __post_init__(self):
        if not self.rho > 0 or not self.speed > 0:
            raise ValueError("density and speed must be positive")

    @property
    def dynamic_pressure(self):
        return 0.5 * self.rho * self.speed**2


@dataclass(frozen=True)
class CtBreakdown:
    ct: float
    pressure_component: float
    friction_component: float
    reference_area: float
    displacement: float

    def as_dict(self):
        return {"C_t": self.ct, "pressure_component": self.pressure_component,
                "friction_component": self.friction_component,
                "S": self.reference_area, "Delta": self.displacement}


def _sums(sub, s, zw, axes):
    """Per-design sums: in-plane area vector, area, pressure force, shear force, volume."""
    area = np.linalg.norm(s, axis=-1)
    fields = sub[..., 3:].mean(axis=-2)
    p_force = -(fields[..., 0] * s[..., 0]).sum(axis=axes)
    f_force = (fields[..., 1] * area).sum(axis=axes)
    vol = _volume_from_clipped(sub, s, zw, axis_sum=axes)
    return (s[..., 0].sum(axis=axes), s[..., 1].sum(axis=axes), area.sum(axis=axes),
            p_force, f_force, vol)


def _wet_sums(tri, zw):
    q = tri[..., :3]
    s = 0.5 * np.cross(q[..., 1, :] - q[..., 0, :], q[..., 2, :] - q[..., 0, :])
    return _sums(tri, s, zw, axes=1)


def _clipped_sums(tri, zw):
    sub, _, s = _clipped_integrals(tri, zw)
    return _sums(sub, s, zw, axes=(1, 2))


def compute_ct_batch(vertices, triangles, pressure, shear_x, cond, watertight_tol=1e-8):
    """Vectorized C_t for a batch of deformations of one surface topology.

    Parameters
    ----------
    vertices : (b, m, 3) array
    triangles : (t, 3) int array
    pressure, shear_x : (b, m) arrays
        Pressure (Pa) and x-component of kinematic wall shear (m^2/s^2).

    Returns
    -------
    dict of (b,) arrays with keys ``ct``, ``pressure``, ``friction``, ``S``, ``Delta``.
    """
    vertices = np.asarray(vertices, dtype=float)
    if vertices.ndim == 2:
        vertices = vertices[None]
    pressure = np.asarray(pressure, dtype=float).reshape(len(vertices), -1)
    shear_x = np.asarray(shear_x, dtype=float).reshape(len(vertices), -1)
    zw = cond.waterline_z
    out = {k: np.empty(len(vertices)) for k in ("ct", "pressure", "friction", "S", "Delta")}
    for start in range(0, len(vertices), _BATCH):
        sl = slice(start, start + _BATCH)
        chan = np.concatenate([vertices[sl], pressure[sl, :, None], shear_x[sl, :, None]], axis=-1)
        # only triangles crossing the waterline somewhere in the batch need clipping
        zt = chan[:, :, 2][:, triangles] - zw
        wet = np.all(zt <= 0, axis=(0, 2))
        cut = ~wet & np.any(zt <= 0, axis=(0, 2))
        parts = [_wet_sums(chan[:, triangles[wet]], zw)]
        if cut.any():
            parts.append(_clipped_sums(chan[:, triangles[cut]], zw))
        sx, sy, total, p_force, f_force, delta = (sum(v) for v in zip(*parts))
        f_force = cond.rho * f_force
        resid = np.hypot(sx, sy) / np.where(total > 0, total, 1.0)
        if np.any(resid > watertight_tol):
            raise WatertightError(resid.max(), watertight_tol)
        if np.any(delta <= 0):
            raise ObjectiveError(f"non-positive immersed volume {delta.min():.3e}")
        S = delta ** (2.0 / 3.0)
        out["ct"][sl] = (f_force + p_force) / (cond.dynamic_pressure * S)
        out["pressure"][sl] = p_force
        out["friction"][sl] = f_force
        out["S"][sl] = S
        out["Delta"][sl] = delta
    return out


def compute_ct(hull, pressure, shear, cond):
    """C_t and its force breakdown for one hull and its nodal fields."""
    for f, comps in ((pressure, 1), (shear, 3)):
        f.check_bound(hull)
        if f.components != comps:
            raise ValueError("pressure must be scalar and shear a 3-vector field")
    r = compute_ct_batch(hull.vertices[None], hull.triangles, pressure.values[None],
                         shear.values[None, :, 0], cond)
    return CtBreakdown(float(r["ct"][0]), float(r["pressure"][0]), float(r["friction"][0]),
                       float(r["S"][0]), float(r["Delta"][0]))


def project_fields(pressure, shear, deformed):
    """Carry reference-surface fields to a deformed hull by vertex identity.

    The hull is deformed, never remeshed, so the deformed surface shares the
    reference topology hash and vertex order. Normals, areas and the immersed
    volume are recomputed from the deformed coordinates by :func:`compute_ct`.
    """
    binding = deformed.topology_hash
    for f in (pressure, shear):
        if f.mesh_binding != binding or len(f.values) != deformed.n_vertices:
            raise BindingError("field topology does not match the deformed hull")
    return NodalField(binding, pressure.values), NodalField(binding, shear.values)
