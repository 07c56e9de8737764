"""Synthetic full-order model, parameter sampling and the snapshot database.

The oracle stands in for a flow solve. It returns smooth pressure and wall
shear fields on a deformed hull from the node coordinates and the design
genes. A one-dimensional ridge term ``r = u + gamma u^2`` with ``u = w . mu_hat``
gives the objective a dominant direction for the active-subspace machinery
to find.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.stats import qmc

from .errors import BindingError, ConfigurationError
from .ffd import ParameterVector
from .geometry import NodalField
from .objective import HullCondition

__all__ = [
    "SyntheticFomSpec",
    "synthetic_fom",
    "synthetic_fields_batch",
    "sample_parameters",
    "SnapshotDb",
    "generate_snapshots",
]

logger = logging.getLogger(__name__)


def _ridge_vector(seed, n):
    w = np.random.default_rng(seed).standard_normal(n)
    return w / np.linalg.norm(w)


@dataclass(frozen=True)
class SyntheticFomSpec:
    """Constants of the synthetic oracle; ``w`` is a seeded unit vector."""

    c1: float = 0.1
    c2: float = 0.05
    c3: float = 2.0
    gamma: float = 0.3
    length: float = 5.976
    n_params: int = 10
    w_seed: int = 2024
    w: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        if not self.length > 0:
            raise ConfigurationError("length scale must be positive")
        w = _ridge_vector(self.w_seed, self.n_params) if self.w is None else np.asarray(self.w, float)
        if w.shape != (self.n_params,) or abs(np.linalg.norm(w) - 1.0) > 1e-12:
            raise ConfigurationError("ridge vector must be a unit vector of length n_params")
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "w", w)

    def to_dict(self):
        d = asdict(self)
        d["w"] = [float(v) for v in self.w]
        return d

    @property
    def hash(self):
        return hashlib.sha1(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _incidence(triangles, n_vertices):
    t = len(triangles)
    rows = triangles.reshape(-1)
    cols = np.repeat(np.arange(t), 3)
    return sp.csr_matrix((np.ones(3 * t), (rows, cols)), shape=(n_vertices, t))


def _batch_normals(vertices, triangles, incidence):
    tri = vertices[:, triangles]
    s = 0.5 * np.cross(tri[:, :, 1] - tri[:, :, 0], tri[:, :, 2] - tri[:, :, 0])
    # (m, t) @ (t, b*3) -> (m, b*3)
    b = len(vertices)
    acc = incidence @ s.transpose(1, 0, 2).reshape(s.shape[1], b * 3)
    n = acc.reshape(-1, b, 3).transpose(1, 0, 2)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    return n / np.where(norm > 0, norm, 1.0)


def synthetic_fields_batch(vertices, triangles, genes, spec=SyntheticFomSpec(), cond=HullCondition(),
                           incidence=None):
    """Oracle fields for a batch of deformed hulls of one topology.

    Parameters
    ----------
    vertices : (b, m, 3) array
    genes : (b, n) array of normalized design coordinates in [-1, 1]

    Returns
    -------
    pressure : (b, m) array, Pa
    shear : (b, m, 3) array, kinematic wall shear in m^2/s^2
    """
    vertices = np.asarray(vertices, dtype=float)
    genes = np.atleast_2d(np.asarray(genes, dtype=float))
    if incidence is None:
        incidence = _incidence(triangles, vertices.shape[1])
    xt, yt, zt = np.moveaxis(vertices / spec.length, -1, 0)
    s = np.sin(2 * np.pi * xt) * np.cos(np.pi * yt) * np.exp(-4 * zt**2)
    u = (genes * spec.w).sum(axis=1)
    r = (u + spec.gamma * u**2)[:, None]
    q = 0.5 * cond.rho * cond.speed**2
    p = q * (spec.c1 * s + spec.c2 * s**2) * (1 + r)
    mag = 0.5 * cond.speed**2 * spec.c3 * 1e-3 * (1 + s) * np.exp(-2 * zt**2) * (1 + r)
    n = _batch_normals(vertices, triangles, incidence)
    # e_x projected onto the tangent plane
    t = -n[..., 0:1] * n
    t[..., 0] += 1.0
    return p, mag[..., None] * t


def synthetic_fom(hull, mu, spec=SyntheticFomSpec(), cond=HullCondition()):
    """Pressure and shear :class:`NodalField` pair on a deformed hull."""
    if not isinstance(mu, ParameterVector):
        mu = ParameterVector(mu)
    p, tau = synthetic_fields_batch(hull.vertices[None], hull.triangles, mu.to_genes()[None], spec, cond)
    h = hull.topology_hash
    return NodalField(h, p[0]), NodalField(h, tau[0])


def sample_parameters(count, bounds=(-0.2, 0.2), seed=0, scheme="uniform", n_params=10):
    """Seeded samples of the design box, shape ``(count, n_params)``.

    ``bounds`` is a ``(lower, upper)`` pair of scalars or length-``n_params``
    arrays. ``scheme`` is ``"uniform"`` or ``"latin-hypercube"``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    lo = np.broadcast_to(np.asarray(bounds[0], float), (n_params,))
    hi = np.broadcast_to(np.asarray(bounds[1], float), (n_params,))
    if scheme == "uniform":
        u = np.random.default_rng(seed).random((count, n_params))
    elif scheme in ("latin-hypercube", "lhs"):
        u = qmc.LatinHypercube(d=n_params, seed=np.random.default_rng(seed)).random(count)
    else:
        raise ConfigurationError(f"unknown sampling scheme {scheme!r}")
    return lo + u * (hi - lo)


# Snapshot database ---------------------------------------------------------
def _tag(values):
    return hashlib.sha1(np.asarray(values, dtype="<f8").tobytes()).hexdigest()[:16]


def _atomic_write(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


class SnapshotDb:
    """Directory of snapshot columns plus a JSON manifest.

    Layout::

        manifest.json              mesh hash, FOM spec hash, field kinds, entries
        columns/<tag>.<kind>.txt   one value per line, 17 significant digits

    Entries are kept in insertion order; ``failed`` records parameters whose
    generation raised.
    """

    KINDS = ("pressure", "shear")

    def __init__(self, directory, mesh_hash=None, n_vertices=None, spec_hash=None):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        (self.directory / "columns").mkdir(exist_ok=True)
        mpath = self.directory / "manifest.json"
        if mpath.exists():
            self.manifest = json.loads(mpath.read_text())
            for key, val in (("mesh_hash", mesh_hash), ("n_vertices", n_vertices), ("fom_spec_hash", spec_hash)):
                if val is not None and self.manifest[key] not in (None, val):
                    raise BindingError(f"database {key} {self.manifest[key]} does not match {val}")
                if val is not None:
                    self.manifest[key] = val
        else:
            self.manifest = {"format": "hullopt-snapshots 1", "mesh_hash": mesh_hash,
                             "n_vertices": n_vertices, "fom_spec_hash": spec_hash,
                             "field_kinds": list(self.KINDS), "entries": [], "failed": []}
            self._flush()
        self._cache = {}

    @property
    def mesh_hash(self):
        return self.manifest["mesh_hash"]

    def __len__(self):
        return len(self.manifest["entries"])

    def _flush(self):
        _atomic_write(self.directory / "manifest.json", json.dumps(self.manifest, indent=1, sort_keys=True) + "\n")

    @staticmethod
    def _values(mu):
        return np.asarray(getattr(mu, "values", mu), dtype=float).reshape(-1)

    def has(self, mu):
        return _tag(self._values(mu)) in {e["tag"] for e in self.manifest["entries"]}

    def add(self, mu, fields):
        """Store a ``(pressure, shear)`` pair for ``mu``; fields may be NodalFields or arrays."""
        values = self._values(mu)
        tag = _tag(values)
        if self.has(values):
            raise ValueError(f"parameter tag {tag} already stored")
        arrays = []
        for f, kind in zip(fields, self.KINDS):
            if isinstance(f, NodalField):
                if self.mesh_hash is not None and f.mesh_binding != self.mesh_hash:
                    raise BindingError("field is bound to a different mesh than the database")
                f = f.values
            a = np.asarray(f, dtype=float)
            if self.manifest["n_vertices"] is not None and len(a) != self.manifest["n_vertices"]:
                raise BindingError(f"{kind} field has {len(a)} nodes, database expects {self.manifest['n_vertices']}")
            arrays.append(a.reshape(-1))
        for a, kind in zip(arrays, self.KINDS):
            _atomic_write(self.directory / "columns" / f"{tag}.{kind}.txt",
                          "".join(f"{v:.17g}\n" for v in a))
        self.manifest["entries"].append({"tag": tag, "mu": [float(v) for v in values]})
        self.manifest["failed"] = [f for f in self.manifest["failed"] if f["tag"] != tag]
        self._flush()
        self._cache.clear()

    def mark_failed(self, mu, reason):
        values = self._values(mu)
        tag = _tag(values)
        self.manifest["failed"] = [f for f in self.manifest["failed"] if f["tag"] != tag]
        self.manifest["failed"].append({"tag": tag, "mu": [float(v) for v in values], "reason": str(reason)})
        self._flush()

    @property
    def parameters(self):
        return np.array([e["mu"] for e in self.manifest["entries"]], dtype=float).reshape(len(self), -1)

    def column(self, tag, kind):
        return np.loadtxt(self.directory / "columns" / f"{tag}.{kind}.txt", ndmin=1)

    def snapshot_matrix(self, kind):
        from .rom import SnapshotMatrix

        if kind not in self.KINDS:
            raise ValueError(f"field kind must be one of {self.KINDS}")
        if kind not in self._cache:
            cols = [self.column(e["tag"], kind) for e in self.manifest["entries"]]
            self._cache[kind] = SnapshotMatrix(np.stack(cols, axis=1), self.parameters, kind)
        return self._cache[kind]

    def content_hash(self):
        """Hash of the manifest entries and every stored column file."""
        h = hashlib.sha1(json.dumps(self.manifest["entries"], sort_keys=True).encode())
        for e in self.manifest["entries"]:
            for kind in self.KINDS:
                h.update((self.directory / "columns" / f"{e['tag']}.{kind}.txt").read_bytes())
        return h.hexdigest()[:16]


def generate_snapshots(mus, design, db, batch=64, morph=False, workers=1):
    """Evaluate the oracle for every ``mu`` not yet in ``db`` and store the fields.

    ``design`` is a :class:`hullopt.pipeline.HullDesign`. Batches are computed
    by ``workers`` threads and written by the caller in input order, so the
    database does not depend on the worker count. With ``morph=True`` the
    volume mesh is morphed for each sample as well and a morph failure marks
    the sample as failed instead of stopping the run. Returns ``db``.
    """
    mus = np.asarray(mus, dtype=float).reshape(-1, design.n_params)
    todo, seen = [], set()
    for mu in mus:
        key = mu.tobytes()
        if key not in seen and not db.has(mu):
            seen.add(key)
            todo.append(mu)
    chunks = [np.array(todo[k:k + batch]) for k in range(0, len(todo), batch)]

    def work(chunk):
        ok = np.ones(len(chunk), bool)
        reasons = {}
        if morph:
            for i, mu in enumerate(chunk):
                try:
                    _, report = design.morph(mu)
                    if report.negative_cells:
                        raise ValueError(f"{report.negative_cells} inverted cells")
                except Exception as exc:  # noqa: BLE001 - recorded, generation continues
                    ok[i] = False
                    reasons[i] = exc
        fields = design.fom_fields(chunk[ok]) if ok.any() else None
        return ok, reasons, fields

    with ThreadPoolExecutor(max_workers=max(1, int(workers))) as pool:
        for chunk, (ok, reasons, fields) in zip(chunks, pool.map(work, chunks)):
            for i, exc in reasons.items():
                logger.warning("morph failed for %s: %s", chunk[i], exc)
                db.mark_failed(chunk[i], exc)
            if fields is not None:
                for mu, p, tau in zip(chunk[ok], *fields):
                    db.add(mu, (p, tau))
    return db
