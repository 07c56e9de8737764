"""Radial basis function propagation of surface displacements to volume nodes.

The surface displacement ``s'_i - s_i`` is interpolated with compactly
supported Beckert-Wendland kernels centred on (a subset of) the surface nodes,

    d(x) = sum_j w_j phi(|x - s_j|),

and evaluated at the volume mesh nodes. No polynomial term is added, so rigid
translations are only reproduced at the control points themselves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy.spatial.distance import cdist

from .errors import BindingError, SolverError
from .geometry import quality_report

__all__ = [
    "wendland_kernel",
    "RbfConfig",
    "RbfInterpolant",
    "RbfSystem",
    "fit",
    "evaluate",
    "morph_volume_mesh",
    "default_radius",
]

logger = logging.getLogger(__name__)

_CHUNK = 4096


def wendland_kernel(r, R):
    """Beckert-Wendland C2 kernel ``(1 - r/R)_+^4 (1 + 4 r/R)``."""
    if not R > 0:
        raise ValueError(f"radius must be positive, got {R}")
    s = np.asarray(r, dtype=float) / R
    return np.maximum(1.0 - s, 0.0) ** 4 * (1.0 + 4.0 * s)


@dataclass(frozen=True)
class RbfConfig:
    """``radius=None`` picks :func:`default_radius` at fit time.

    ``subsample`` is either a stride ``k`` (every k-th surface node) or an
    explicit sequence of vertex ids.
    """

    radius: float = None
    subsample: object = 1
    pivot_tolerance: float = 1e-14
    jitter: float = 1e-12

    def __post_init__(self):
        if self.radius is not None and not self.radius > 0:
            raise ValueError("radius must be positive")
        if np.isscalar(self.subsample) and int(self.subsample) < 1:
            raise ValueError("subsample stride must be >= 1")


def default_radius(before_points, displacement):
    """1.5 x the bounding-box diagonal of the displaced nodes (all nodes if none move)."""
    moving = np.any(displacement != 0.0, axis=1)
    pts = before_points[moving] if moving.any() else before_points
    return 1.5 * float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))) or 1.0


class RbfSystem:
    """Factorized interpolation matrix for a fixed set of control points.

    The matrix depends only on the control positions and radius, so one
    factorization serves every deformation of the same reference surface.
    """

    def __init__(self, control_points, radius, pivot_tolerance=1e-14, jitter=1e-12):
        self.control_points = np.asarray(control_points, dtype=float)
        self.radius = float(radius)
        self.A = wendland_kernel(cdist(self.control_points, self.control_points), self.radius)
        try:
            self._factor(self.A, pivot_tolerance)
        except SolverError:
            logger.warning("RBF matrix factorization failed; retrying with %.1e diagonal jitter", jitter)
            self._factor(self.A + jitter * np.eye(len(self.A)), pivot_tolerance)

    def _factor(self, A, tol):
        lu, d, perm = la.ldl(A, lower=True, hermitian=True, check_finite=False)
        diag = np.diag(d).copy()
        off = np.diag(d, -1).copy()
        eig = la.eigvalsh_tridiagonal(diag, off) if len(diag) > 1 else diag
        scale = np.abs(eig).max()
        if not np.all(np.isfinite(eig)) or scale == 0 or np.abs(eig).min() < tol * scale:
            raise SolverError(
                f"RBF matrix is singular or ill-conditioned (pivot ratio "
                f"{np.abs(eig).min() / scale if scale else 0.0:.1e}); "
                "use a larger radius or remove coincident control points")
        self._L = lu[perm]
        self._perm = perm
        band = np.zeros((3, len(diag)))
        band[0, 1:] = off
        band[1] = diag
        band[2, :-1] = off
        self._band = band

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        y = la.solve_triangular(self._L, rhs[self._perm], lower=True, unit_diagonal=True, check_finite=False)
        z = la.solve_banded((1, 1), self._band, y, check_finite=False)
        w = la.solve_triangular(self._L.T, z, lower=False, unit_diagonal=True, check_finite=False)
        x = np.empty_like(w)
        x[self._perm] = w
        # one step of iterative refinement keeps the constraint residual tight
        r = rhs - self.A @ x
        if np.any(r):
            y = la.solve_triangular(self._L, r[self._perm], lower=True, unit_diagonal=True, check_finite=False)
            z = la.solve_banded((1, 1), self._band, y, check_finite=False)
            w = la.solve_triangular(self._L.T, z, lower=False, unit_diagonal=True, check_finite=False)
            dx = np.empty_like(w)
            dx[self._perm] = w
            x = x + dx
        return x


@dataclass(frozen=True, eq=False)
class RbfInterpolant:
    control_points: np.ndarray
    weights: np.ndarray
    radius: float

    def __post_init__(self):
        if len(self.control_points) != len(self.weights):
            raise ValueError("one weight vector per control point is required")

    def __call__(self, points):
        return evaluate(self, points)


def _control_indices(n, subsample, vertex_ids):
    if np.isscalar(subsample):
        return np.arange(0, n, int(subsample))
    pos = {int(v): i for i, v in enumerate(vertex_ids)}
    try:
        return np.array(sorted(pos[int(v)] for v in subsample))
    except KeyError as exc:
        raise BindingError(f"control id {exc.args[0]} not on the surface") from None


def _paired_displacement(before, after):
    if before.n_vertices != after.n_vertices or not np.array_equal(
            np.sort(before.vertex_ids), np.sort(after.vertex_ids)):
        raise BindingError("before/after surfaces do not share vertex ids")
    if np.array_equal(before.vertex_ids, after.vertex_ids):
        return after.vertices - before.vertices
    order = np.argsort(after.vertex_ids)[np.argsort(np.argsort(before.vertex_ids))]
    return after.vertices[order] - before.vertices


def fit(before, after, cfg=RbfConfig(), system=None):
    """Solve for the RBF weights that reproduce the surface displacement at the controls."""
    disp = _paired_displacement(before, after)
    idx = _control_indices(before.n_vertices, cfg.subsample, before.vertex_ids)
    ctrl = before.vertices[idx]
    rhs = disp[idx]
    radius = cfg.radius if cfg.radius is not None else default_radius(before.vertices, disp)
    if system is None or system.radius != radius or not np.array_equal(system.control_points, ctrl):
        if not np.any(rhs):
            return RbfInterpolant(ctrl, np.zeros_like(rhs), radius)
        system = RbfSystem(ctrl, radius, cfg.pivot_tolerance, cfg.jitter)
    weights = system.solve(rhs)
    scale = max(np.abs(rhs).max(), 1e-300)
    resid = np.abs(system.A @ weights - rhs).max() / scale
    if resid > 1e-8:
        raise SolverError(f"RBF interpolation residual {resid:.2e} above 1e-8")
    return RbfInterpolant(ctrl, weights, radius)


def evaluate(itp, points):
    """Displacement at ``points``; exactly zero beyond ``radius`` from every control."""
    points = np.asarray(points, dtype=float)
    out = np.zeros(points.shape)
    if not np.any(itp.weights):
        return out
    for start in range(0, len(points), _CHUNK):
        sl = slice(start, start + _CHUNK)
        phi = wendland_kernel(cdist(points[sl], itp.control_points), itp.radius)
        out[sl] = phi @ itp.weights
    return out


def morph_volume_mesh(vol, before, after, cfg=RbfConfig(), system=None):
    """Move volume nodes with the RBF interpolant of the surface deformation.

    Returns the morphed mesh (connectivity untouched) and its quality report.
    Inverted cells are reported as warnings, not raised.
    """
    itp = fit(before, after, cfg, system)
    if not np.any(itp.weights):
        return vol, quality_report(vol)
    morphed = vol.with_nodes(vol.nodes + evaluate(itp, vol.nodes))
    report = quality_report(morphed)
    if report.negative_cells:
        logger.warning("morphed mesh has %d inverted cells", report.negative_cells)
    return morphed, report
