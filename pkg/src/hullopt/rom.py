"""POD-GPR reduced-order model.

Snapshots are stacked as columns of ``X``; the POD modes are the leading left
singular vectors and the modal coefficients are ``C = U_N^T X``. One Gaussian
process per modal coefficient maps parameters to coefficients, and a
prediction is lifted back with ``U_N c``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as la
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .errors import BindingError, EnrichmentError, SolverError
from .geometry import NodalField

__all__ = [
    "SnapshotMatrix",
    "PodBasis",
    "pod",
    "GaussianProcess",
    "GprModel",
    "gpr_fit",
    "PodGprRom",
    "build_rom",
    "rom_predict",
    "enrich",
    "save_rom",
    "load_rom",
]

logger = logging.getLogger(__name__)

FIELD_KINDS = ("pressure", "shear")


@dataclass(frozen=True, eq=False)
class SnapshotMatrix:
    """Columns are high-fidelity fields; ``parameters[j]`` produced column ``j``."""

    columns: np.ndarray
    parameters: np.ndarray
    field_kind: str = "pressure"

    def __post_init__(self):
        X = np.asarray(self.columns, dtype=float)
        P = np.atleast_2d(np.asarray(self.parameters, dtype=float))
        if X.ndim != 2 or X.shape[1] < 1:
            raise ValueError("snapshot matrix needs at least one column")
        if P.shape[0] != X.shape[1]:
            raise ValueError("one parameter vector per snapshot column is required")
        if len(np.unique(P, axis=0)) != len(P):
            raise ValueError("snapshot parameters must be unique")
        object.__setattr__(self, "columns", X)
        object.__setattr__(self, "parameters", P)

    @property
    def shape(self):
        return self.columns.shape


@dataclass(frozen=True, eq=False)
class PodBasis:
    modes: np.ndarray
    singular_values: np.ndarray

    @property
    def n_modes(self):
        return self.modes.shape[1]

    def project(self, X):
        return self.modes.T @ X

    def lift(self, coeffs):
        return self.modes @ coeffs


def pod(X, n_modes):
    """Truncated POD basis and modal coefficients ``C = U_N^T X`` (shape ``N x M``)."""
    X = np.asarray(getattr(X, "columns", X), dtype=float)
    if not 1 <= n_modes <= min(X.shape):
        raise ValueError(f"mode count {n_modes} outside [1, {min(X.shape)}]")
    U, s, _ = la.svd(X, full_matrices=False, lapack_driver="gesdd")
    U = U[:, :n_modes]
    # deterministic signs: largest-magnitude entry of each mode positive
    flip = np.sign(U[np.argmax(np.abs(U), axis=0), np.arange(n_modes)])
    U = U * np.where(flip == 0, 1.0, flip)
    basis = PodBasis(U, s[:n_modes])
    return basis, U.T @ X


# Gaussian process regression ==================================================
def _correlation(d2, length, exponent):
    """Squared-exponential correlation; ``exponent='unsquared'`` divides by 2l, ``'standard'`` by 2l^2."""
    denom = 2.0 * length if exponent == "unsquared" else 2.0 * length**2
    return np.exp(-d2 / denom)


class GaussianProcess:
    """Single-output GP with kernel ``sigma^2 exp(-|x - x'|^2 / (2 l))``.

    Hyperparameters not given explicitly are found by maximizing the log
    marginal likelihood: ``sigma`` in closed form, ``l`` by a seeded
    multi-start bounded search in log space. Training samples are sorted
    first, so the fit does not depend on their order.
    """

    def __init__(self, sigma=None, length=None, nugget=1e-8, normalize=True,
                 exponent="unsquared", n_restarts=8, seed=0, max_nugget=1e-4):
        if exponent not in ("unsquared", "standard"):
            raise ValueError("exponent must be 'unsquared' or 'standard'")
        if sigma is not None and not sigma > 0:
            raise ValueError("sigma must be positive")
        if length is not None and not length > 0:
            raise ValueError("length must be positive")
        if nugget < 0:
            raise ValueError("nugget must be non-negative")
        self.sigma = sigma
        self.length = length
        self.nugget = nugget
        self.normalize = normalize
        self.exponent = exponent
        self.n_restarts = n_restarts
        self.seed = seed
        self.max_nugget = max_nugget

    def _factor(self, R):
        g = self.nugget
        n = len(R)
        while True:
            try:
                return la.cho_factor(R + g * np.eye(n), lower=True, check_finite=False), g
            except la.LinAlgError:
                g = max(g * 10.0, 1e-12)
                if g > self.max_nugget * (1 + 1e-12):
                    raise SolverError("kernel matrix not positive definite after nugget escalation") from None

    def _profile(self, log_len, d2, y):
        """Negative log marginal likelihood with sigma^2 profiled out."""
        R = _correlation(d2, np.exp(log_len), self.exponent)
        try:
            (c, lower), _ = self._factor(R)
        except SolverError:
            return np.inf
        alpha = la.cho_solve((c, lower), y, check_finite=False)
        m = len(y)
        s2 = max(float(y @ alpha) / m, 1e-300)
        logdet = 2.0 * np.log(np.diag(c)).sum()
        return 0.5 * m * np.log(s2) + 0.5 * logdet + 0.5 * m * (1 + np.log(2 * np.pi))

    def fit(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        if len(X) != len(y):
            raise ValueError("inputs and outputs differ in length")
        if len(X) < 2 and self.length is None:
            raise ValueError("hyperparameter fit needs at least 2 samples")
        order = np.lexsort(X.T[::-1])
        X, y = X[order], y[order]
        if len(np.unique(X, axis=0)) != len(X):
            raise ValueError("training inputs must be distinct")
        if self.normalize:
            self.y_mean = float(y.mean())
            std = float(y.std())
            self.y_std = std if std > 0 else 1.0
        else:
            self.y_mean, self.y_std = 0.0, 1.0
        yn = (y - self.y_mean) / self.y_std
        d2 = cdist(X, X, "sqeuclidean")

        length = self.length
        if length is None:
            length = self._optimize_length(d2, yn)
        self.length_ = float(length)
        R = _correlation(d2, self.length_, self.exponent)
        (c, lower), g = self._factor(R)
        self.nugget_ = g
        self.alpha_ = la.cho_solve((c, lower), yn, check_finite=False)
        if self.sigma is None:
            self.sigma_ = float(np.sqrt(max(yn @ self.alpha_ / len(yn), 1e-300)) * self.y_std)
        else:
            self.sigma_ = float(self.sigma)
        self._chol = (c, lower)
        self.X_ = X
        return self

    def _optimize_length(self, d2, yn):
        if not np.any(yn):
            return 1.0
        pos = d2[d2 > 0]
        lo, hi = np.log(1e-2 * pos.min()), np.log(1e3 * pos.max())
        if self.exponent == "standard":
            lo, hi = 0.5 * lo, 0.5 * hi
        rng = np.random.default_rng(self.seed)
        starts = np.concatenate([[0.5 * (lo + hi)], rng.uniform(lo, hi, self.n_restarts - 1)])
        best = None
        for x0 in starts:
            res = minimize(lambda t: self._profile(t[0], d2, yn), [x0], method="L-BFGS-B",
                           bounds=[(lo, hi)])
            if best is None or res.fun < best.fun:
                best = res
        return float(np.exp(best.x[0]))

    def predict(self, Xq, return_std=False):
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        k = _correlation(cdist(Xq, self.X_, "sqeuclidean"), self.length_, self.exponent)
        mean = self.y_mean + self.y_std * (k @ self.alpha_)
        if not return_std:
            return mean
        v = la.cho_solve(self._chol, k.T, check_finite=False)
        var = np.maximum(1.0 + self.nugget_ - np.einsum("ij,ji->i", k, v), 0.0)
        return mean, self.sigma_ * np.sqrt(var)


class GprModel:
    """Independent GPs, one per output column, sharing the training inputs."""

    def __init__(self, regressors):
        self.regressors = list(regressors)

    @property
    def n_outputs(self):
        return len(self.regressors)

    @property
    def hyperparameters(self):
        return [(gp.sigma_, gp.length_, gp.nugget_) for gp in self.regressors]

    def predict(self, Xq):
        return np.stack([gp.predict(Xq) for gp in self.regressors], axis=-1)


def gpr_fit(params, coeffs, **gp_options):
    """Fit one :class:`GaussianProcess` per column of ``coeffs`` (``M x N``)."""
    params = np.atleast_2d(np.asarray(params, dtype=float))
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim == 1:
        coeffs = coeffs[:, None]
    if len(params) != len(coeffs):
        raise ValueError("parameter and coefficient sample counts differ")
    return GprModel(GaussianProcess(**gp_options).fit(params, coeffs[:, j]) for j in range(coeffs.shape[1]))


# Composite ROM ==============================================================
@dataclass(eq=False)
class PodGprRom:
    basis: PodBasis
    gpr: GprModel
    mesh_binding: str
    field_kind: str = "pressure"

    def __post_init__(self):
        if self.gpr.n_outputs != self.basis.n_modes:
            raise ValueError("regressor output count must equal the mode count")

    def predict(self, params):
        """Reconstructed field vectors, shape ``(q, N_dof)`` (or ``(N_dof,)`` for one point)."""
        P = np.asarray(getattr(params, "values", params), dtype=float)
        single = P.ndim == 1
        c = self.gpr.predict(np.atleast_2d(P))
        out = c @ self.basis.modes.T
        return out[0] if single else out

    def predict_field(self, params, mesh=None):
        if mesh is not None and mesh.topology_hash != self.mesh_binding:
            raise BindingError("ROM was built on a different surface mesh")
        v = self.predict(params)
        if self.field_kind == "shear":
            v = v.reshape(-1, 3)
        return NodalField(self.mesh_binding, v)


def build_rom(snapshots, n_modes=20, mesh_binding="", **gp_options):
    """POD of the snapshot matrix followed by per-coefficient GPR."""
    n = min(n_modes, *snapshots.shape)
    basis, C = pod(snapshots, n)
    gpr = gpr_fit(snapshots.parameters, C.T, **gp_options)
    return PodGprRom(basis, gpr, mesh_binding, snapshots.field_kind)


def rom_predict(rom, mu, mesh=None):
    """Predicted field at ``mu`` as a :class:`NodalField`."""
    lower = getattr(mu, "lower", None)
    if lower is not None and (np.any(mu.values < mu.lower) or np.any(mu.values > mu.upper)):
        raise ValueError("parameter outside bounds")
    return rom.predict_field(mu, mesh)


def enrich(db, mu, fields, n_modes=20, **gp_options):
    """Add one validated snapshot pair to ``db`` and rebuild both ROMs.

    Returns a dict ``{"pressure": rom, "shear": rom}``.
    """
    if db.has(mu):
        raise EnrichmentError(f"parameter {np.asarray(getattr(mu, 'values', mu))} already in database")
    db.add(mu, fields)
    return {kind: build_rom(db.snapshot_matrix(kind), n_modes, db.mesh_hash, **gp_options)
            for kind in FIELD_KINDS}


# Persistence ================================================================
def save_rom(rom, directory):
    """Write a ROM as ``.npy`` arrays plus a JSON manifest (byte-reproducible)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    np.save(d / "modes.npy", rom.basis.modes)
    np.save(d / "singular_values.npy", rom.basis.singular_values)
    gps = rom.gpr.regressors
    np.save(d / "train_inputs.npy", gps[0].X_)
    np.save(d / "alpha.npy", np.stack([gp.alpha_ for gp in gps]))
    meta = {
        "mesh_binding": rom.mesh_binding,
        "field_kind": rom.field_kind,
        "exponent": gps[0].exponent,
        "regressors": [
            {"sigma": gp.sigma_, "length": gp.length_, "nugget": gp.nugget_,
             "y_mean": gp.y_mean, "y_std": gp.y_std} for gp in gps
        ],
    }
    (d / "rom.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def load_rom(directory):
    d = Path(directory)
    meta = json.loads((d / "rom.json").read_text())
    X = np.load(d / "train_inputs.npy")
    alpha = np.load(d / "alpha.npy")
    gps = []
    for j, r in enumerate(meta["regressors"]):
        gp = GaussianProcess(sigma=r["sigma"], length=r["length"], nugget=r["nugget"],
                             exponent=meta["exponent"])
        gp.X_, gp.alpha_ = X, alpha[j]
        gp.sigma_, gp.length_, gp.nugget_ = r["sigma"], r["length"], r["nugget"]
        gp.y_mean, gp.y_std = r["y_mean"], r["y_std"]
        R = _correlation(cdist(X, X, "sqeuclidean"), gp.length_, gp.exponent)
        gp._chol = la.cho_factor(R + gp.nugget_ * np.eye(len(X)), lower=True)
        gps.append(gp)
    basis = PodBasis(np.load(d / "modes.npy"), np.load(d / "singular_values.npy"))
    return PodGprRom(basis, GprModel(gps), meta["mesh_binding"], meta["field_kind"])
