"""Surface and volume mesh containers, file I/O and mesh-quality metrics.

Meshes are immutable: every deformation returns a new object that shares the
connectivity arrays of its parent, which is what the reduced-order model needs
(fields of different shapes live on the same degrees of freedom).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import BindingError

__all__ = [
    "MeshError",
    "MeshParseError",
    "DegenerateTriangleError",
    "WatertightError",
    "SurfaceMesh",
    "NodalField",
    "VolumeMesh",
    "QualityReport",
    "read_surface_mesh",
    "write_stl",
    "write_obj",
    "read_vmesh",
    "write_vmesh",
    "hex_volume_mesh",
    "cell_volume",
    "cell_volumes",
    "quality_report",
    "clip_triangles_below",
    "immersed_volume",
]


class MeshError(ValueError):
    """Base class for invalid mesh input."""


class MeshParseError(MeshError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class DegenerateTriangleError(MeshError):
    def __init__(self, facets):
        self.facets = list(int(f) for f in facets)
        shown = ", ".join(str(f) for f in self.facets[:20])
        more = "" if len(self.facets) <= 20 else f" (+{len(self.facets) - 20} more)"
        super().__init__(f"degenerate (zero-area) triangles at facets: {shown}{more}")


class WatertightError(MeshError):
    def __init__(self, residual, tolerance):
        self.residual = float(residual)
        self.tolerance = float(tolerance)
        super().__init__(
            f"clipped surface is not closed: flux residual {residual:.3e} > {tolerance:.1e}"
        )


def _hash_arrays(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]


# Surface meshes ==============================================================
@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Triangulated surface.

    Parameters
    ----------
    vertices : (m, 3) float array
    triangles : (t, 3) int array
        Vertex indices, counter-clockwise seen from outside.
    vertex_ids : (m,) int array, optional
        Stable labels that survive deformation; defaults to ``arange(m)``.
    check_degenerate : bool
        Reject zero-area triangles. Deformed meshes skip the check.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    vertex_ids: np.ndarray = None
    check_degenerate: bool = field(default=True, repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        t = np.asarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must have shape (m, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError(f"triangles must have shape (t, 3), got {t.shape}")
        if not np.all(np.isfinite(v)):
            raise MeshError("vertex coordinates must be finite")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")
        ids = np.arange(len(v)) if self.vertex_ids is None else np.asarray(self.vertex_ids, dtype=np.int64)
        if ids.shape != (len(v),):
            raise MeshError("vertex_ids must have one entry per vertex")
        if len(np.unique(ids)) != len(ids):
            raise MeshError("vertex_ids must be unique")
        v.flags.writeable = False
        t.flags.writeable = False
        ids.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "vertex_ids", ids)
        if self.check_degenerate and len(t):
            tol = 1e-14 * max(self.bbox_diagonal, 1e-300) ** 2
            bad = np.flatnonzero(self.triangle_areas <= tol)
            if len(bad):
                raise DegenerateTriangleError(bad)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @cached_property
    def bbox_diagonal(self):
        lo, hi = self.bbox
        return float(np.linalg.norm(hi - lo))

    @cached_property
    def triangle_area_vectors(self):
        p = self.vertices[self.triangles]
        return 0.5 * np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    @cached_property
    def triangle_areas(self):
        return np.linalg.norm(self.triangle_area_vectors, axis=1)

    @cached_property
    def vertex_normals(self):
        """Area-weighted unit vertex normals."""
        n = np.zeros_like(self.vertices)
        s = self.triangle_area_vectors
        for k in range(3):
            np.add.at(n, self.triangles[:, k], s)
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(norm > 0, norm, 1.0)

    @cached_property
    def topology_hash(self):
        """Identity of the connectivity and labels, independent of coordinates."""
        return _hash_arrays(self.triangles, self.vertex_ids)

    def with_vertices(self, vertices):
        """Same connectivity and labels, new coordinates."""
        return SurfaceMesh(vertices, self.triangles, self.vertex_ids, check_degenerate=False)

    def edge_use_counts(self):
        """Map of undirected edge -> (uses, orientation sum); closed manifolds give (2, 0)."""
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        sign = np.where(e[:, 0] < e[:, 1], 1, -1)
        key = np.sort(e, axis=1)
        uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        orient = np.bincount(inv.ravel(), weights=sign, minlength=len(uniq))
        return uniq, counts, orient

    def is_closed(self):
        _, counts, orient = self.edge_use_counts()
        return bool(np.all(counts == 2) and np.all(orient == 0))


@dataclass(frozen=True, eq=False)
class NodalField:
    """Scalar or 3-vector values attached to the vertices of a surface mesh."""

    mesh_binding: str
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2 and v.shape[1] == 1:
            v = v[:, 0]
        if not (v.ndim == 1 or (v.ndim == 2 and v.shape[1] == 3)):
            raise ValueError(f"field values must be (m,) or (m, 3), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def components(self):
        return 1 if self.values.ndim == 1 else 3

    def flat(self):
        return self.values.reshape(-1)

    def check_bound(self, mesh):
        if self.mesh_binding != mesh.topology_hash:
            raise BindingError(
                f"field bound to mesh {self.mesh_binding}, got mesh {mesh.topology_hash}"
            )
        if len(self.values) != mesh.n_vertices:
            raise BindingError("field length does not match vertex count")


# Surface I/O -----------------------------------------------------------------
def _weld(points, tol):
    """Merge coincident points. ``tol=None`` means exact bit equality."""
    pts = np.asarray(points, dtype=float)
    if tol is None or tol <= 0:
        uniq, first, inv = np.unique(pts, axis=0, return_index=True, return_inverse=True)
    else:
        keys = np.round(pts / tol).astype(np.int64)
        uniq, first, inv = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    # keep first-seen order so vertex numbering follows the file
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return pts[first[order]], rank[inv.ravel()]


def _read_ascii_stl(path, weld_tol):
    corners = []
    lines = Path(path).read_text().splitlines()
    solid_seen = False
    in_loop = False
    loop = []
    for lineno, raw in enumerate(lines, start=1):
        tok = raw.split()
        if not tok:
            continue
        key = tok[0].lower()
        if key == "solid":
            solid_seen = True
        elif key == "vertex":
            if not in_loop:
                raise MeshParseError("vertex outside of 'outer loop'", lineno, path)
            try:
                loop.append([float(x) for x in tok[1:4]])
            except ValueError:
                raise MeshParseError(f"bad vertex coordinates: {raw.strip()!r}", lineno, path) from None
            if len(tok) != 4:
                raise MeshParseError("vertex needs 3 coordinates", lineno, path)
        elif key == "outer":
            in_loop = True
            loop = []
        elif key == "endloop":
            if len(loop) != 3:
                raise MeshParseError(f"facet has {len(loop)} vertices, expected 3", lineno, path)
            corners.extend(loop)
            in_loop = False
        elif key in ("facet", "endfacet", "endsolid"):
            pass
        else:
            raise MeshParseError(f"unexpected token {tok[0]!r}", lineno, path)
    if not solid_seen:
        raise MeshParseError("missing 'solid' header", 1, path)
    if in_loop:
        raise MeshParseError("unterminated facet", len(lines), path)
    if not corners:
        raise MeshParseError("no facets found", len(lines), path)
    if weld_tol is not None and weld_tol > 0:
        c = np.asarray(corners)
        weld_tol = weld_tol * float(np.linalg.norm(c.max(0) - c.min(0)))
    verts, idx = _weld(corners, weld_tol)
    return verts, idx.reshape(-1, 3)


def _read_obj(path):
    verts, tris = [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        tok = raw.split("#", 1)[0].split()
        if not tok:
            continue
        if tok[0] == "v":
            try:
                verts.append([float(x) for x in tok[1:4]])
            except ValueError:
                raise MeshParseError(f"bad vertex: {raw.strip()!r}", lineno, path) from None
            if len(tok) < 4:
                raise MeshParseError("vertex needs 3 coordinates", lineno, path)
        elif tok[0] == "f":
            try:
                ids = [int(t.split("/")[0]) for t in tok[1:]]
            except ValueError:
                raise MeshParseError(f"bad face: {raw.strip()!r}", lineno, path) from None
            if len(ids) < 3:
                raise MeshParseError("face needs at least 3 vertices", lineno, path)
            ids = [i - 1 if i > 0 else len(verts) + i for i in ids]
            for k in range(1, len(ids) - 1):
                tris.append([ids[0], ids[k], ids[k + 1]])
    if not verts or not tris:
        raise MeshParseError("no vertices or faces found", None, path)
    return np.asarray(verts), np.asarray(tris)


def read_surface_mesh(path, format=None, weld_tol=None):
    """Read an ASCII STL or OBJ surface.

    STL vertices are welded by exact coordinate equality unless ``weld_tol``
    (a fraction of the bounding-box diagonal) is given.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt in ("stl", "ascii-stl"):
        v, t = _read_ascii_stl(path, weld_tol)
    elif fmt == "obj":
        v, t = _read_obj(path)
    else:
        raise ValueError(f"unsupported surface format {fmt!r}")
    return SurfaceMesh(v, t)


def write_stl(mesh, path, name="surface"):
    n = mesh.triangle_area_vectors
    # writers must not fail on tiny triangles
    nn = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
    out = [f"solid {name}"]
    for k, tri in enumerate(mesh.triangles):
        out.append("  facet normal {:.17g} {:.17g} {:.17g}".format(*nn[k]))
        out.append("    outer loop")
        for i in tri:
            out.append("      vertex {:.17g} {:.17g} {:.17g}".format(*mesh.vertices[i]))
        out.append("    endloop")
        out.append("  endfacet")
    out.append(f"endsolid {name}")
    Path(path).write_text("\n".join(out) + "\n")


def write_obj(mesh, path):
    out = ["v {:.17g} {:.17g} {:.17g}".format(*p) for p in mesh.vertices]
    out += ["f {} {} {}".format(*(t + 1)) for t in mesh.triangles]
    Path(path).write_text("\n".join(out) + "\n")


# Volume meshes ===============================================================
@dataclass(frozen=True, eq=False)
class VolumeMesh:
    """Face-based polyhedral mesh (owner/neighbour convention).

    Face node order defines the area vector by the right-hand rule; it points
    out of the owner cell. Boundary faces have ``neighbour == -1``.
    """

    nodes: np.ndarray
    face_nodes: tuple
    owner: np.ndarray
    neighbour: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        faces = tuple(np.asarray(f, dtype=np.int64) for f in self.face_nodes)
        owner = np.asarray(self.owner, dtype=np.int64)
        nb = np.asarray(self.neighbour, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 3:
            raise MeshError("nodes must have shape (n, 3)")
        if len(owner) != len(faces) or len(nb) != len(faces):
            raise MeshError("owner/neighbour must have one entry per face")
        if any(len(f) < 3 for f in faces):
            raise MeshError("faces need at least 3 nodes")
        sizes = np.array([len(f) for f in faces], dtype=np.int64)
        flat = np.concatenate(faces) if faces else np.zeros(0, np.int64)
        if flat.size and (flat.min() < 0 or flat.max() >= len(nodes)):
            raise MeshError("face node index out of range")
        if owner.size and owner.min() < 0:
            raise MeshError("every face needs an owner cell")
        if nb.size and nb.min() < -1:
            raise MeshError("neighbour index must be >= -1")
        for a in (nodes, owner, nb, flat, sizes):
            a.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "face_nodes", faces)
        object.__setattr__(self, "owner", owner)
        object.__setattr__(self, "neighbour", nb)
        object.__setattr__(self, "_flat", flat)
        object.__setattr__(self, "_sizes", sizes)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_faces(self):
        return len(self.face_nodes)

    @cached_property
    def n_cells(self):
        if not self.n_faces:
            return 0
        return int(max(self.owner.max(), self.neighbour.max()) + 1)

    @cached_property
    def internal(self):
        return self.neighbour >= 0

    @cached_property
    def _offsets(self):
        return np.concatenate([[0], np.cumsum(self._sizes)])

    @cached_property
    def _fan(self):
        """Fan triangles of every face about its centroid: (face, node_a, node_b)."""
        sizes, off = self._sizes, self._offsets
        face = np.repeat(np.arange(self.n_faces), sizes)
        local = np.arange(len(self._flat)) - np.repeat(off[:-1], sizes)
        a = self._flat[off[face] + local]
        b = self._flat[off[face] + (local + 1) % sizes[face]]
        return face, a, b

    @cached_property
    def _cell_node_pairs(self):
        cells = np.concatenate([np.repeat(self.owner, self._sizes),
                                np.repeat(self.neighbour, self._sizes)])
        nodes = np.concatenate([self._flat, self._flat])
        keep = cells >= 0
        pairs = np.unique(np.stack([cells[keep], nodes[keep]], axis=1), axis=0)
        return pairs

    @cached_property
    def cells(self):
        """Node indices of each cell (sorted)."""
        pairs = self._cell_node_pairs
        split = np.searchsorted(pairs[:, 0], np.arange(1, self.n_cells))
        return tuple(np.split(pairs[:, 1], split))

    @cached_property
    def topology_hash(self):
        return _hash_arrays(self._flat, self._sizes, self.owner, self.neighbour)

    def with_nodes(self, nodes):
        m = VolumeMesh.__new__(VolumeMesh)
        nodes = np.array(nodes, dtype=float)
        if nodes.shape != self.nodes.shape:
            raise MeshError("node array shape must be unchanged")
        nodes.flags.writeable = False
        for name in ("face_nodes", "owner", "neighbour", "_flat", "_sizes"):
            object.__setattr__(m, name, getattr(self, name))
        object.__setattr__(m, "nodes", nodes)
        # connectivity-only caches carry over
        for name in ("n_cells", "internal", "_offsets", "_fan", "_cell_node_pairs", "cells", "topology_hash"):
            if name in self.__dict__:
                m.__dict__[name] = self.__dict__[name]
        return m

    # geometry ---------------------------------------------------------------
    def face_centres(self):
        p = self.nodes[self._flat]
        return np.add.reduceat(p, self._offsets[:-1], axis=0) / self._sizes[:, None]

    def _fan_area_vectors(self, fc):
        face, a, b = self._fan
        c = fc[face]
        return 0.5 * np.cross(self.nodes[a] - c, self.nodes[b] - c)

    def face_area_vectors(self):
        fc = self.face_centres()
        s = self._fan_area_vectors(fc)
        out = np.zeros((self.n_faces, 3))
        np.add.at(out, self._fan[0], s)
        return out

    def cell_node_centres(self):
        pairs = self._cell_node_pairs
        count = np.bincount(pairs[:, 0], minlength=self.n_cells)
        return np.stack([np.bincount(pairs[:, 0], weights=self.nodes[pairs[:, 1], k],
                                     minlength=self.n_cells) for k in range(3)], axis=1) / count[:, None]

    def _cell_volumes_and_centroids(self):
        fc = self.face_centres()
        face, a, b = self._fan
        s = self._fan_area_vectors(fc)
        cc = self.cell_node_centres()
        own = self.owner[face]
        nb = self.neighbour[face]
        tri_c = (fc[face] + self.nodes[a] + self.nodes[b]) / 3.0

        vol = np.zeros(self.n_cells)
        mom = np.zeros((self.n_cells, 3))
        v_own = np.einsum("ij,ij->i", s, fc[face] - cc[own]) / 3.0
        np.add.at(vol, own, v_own)
        np.add.at(mom, own, v_own[:, None] * (0.25 * cc[own] + 0.75 * tri_c))
        m = nb >= 0
        v_nb = -np.einsum("ij,ij->i", s[m], fc[face[m]] - cc[nb[m]]) / 3.0
        np.add.at(vol, nb[m], v_nb)
        np.add.at(mom, nb[m], v_nb[:, None] * (0.25 * cc[nb[m]] + 0.75 * tri_c[m]))
        with np.errstate(invalid="ignore", divide="ignore"):
            centroid = np.where(np.abs(vol)[:, None] > 0, mom / vol[:, None], cc)
        return vol, centroid


def cell_volumes(mesh):
    """Signed volumes of all cells by pyramid decomposition about node centroids."""
    return mesh._cell_volumes_and_centroids()[0]


def cell_volume(mesh, cell):
    """Signed volume of one cell; negative when its faces point inwards."""
    if not 0 <= cell < mesh.n_cells:
        raise IndexError(f"cell {cell} out of range [0, {mesh.n_cells})")
    return float(cell_volumes(mesh)[cell])


def hex_volume_mesh(nodes, hexes):
    """Build a face-based mesh from hexahedra.

    ``hexes`` rows list nodes as bottom quad (0-3) then top quad (4-7), with the
    bottom counter-clockwise when seen from the top.
    """
    hexes = np.asarray(hexes, dtype=np.int64)
    local = np.array([[0, 3, 2, 1], [4, 5, 6, 7], [0, 1, 5, 4],
                      [1, 2, 6, 5], [2, 3, 7, 6], [3, 0, 4, 7]])
    quads = hexes[:, local].reshape(-1, 4)
    cell = np.repeat(np.arange(len(hexes)), 6)
    key = np.sort(quads, axis=1)
    _, first, inv, counts = np.unique(key, axis=0, return_index=True,
                                      return_inverse=True, return_counts=True)
    inv = inv.ravel()
    if counts.max() > 2:
        raise MeshError("a face is shared by more than two cells")
    order = np.argsort(first, kind="stable")
    owner = cell[first[order]]
    faces = quads[first[order]]
    neighbour = np.full(len(order), -1, dtype=np.int64)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    occ = np.arange(len(quads))
    second = occ != first[inv]
    neighbour[rank[inv[second]]] = cell[second]
    # internal faces first, as in most finite-volume codes
    perm = np.argsort(neighbour < 0, kind="stable")
    return VolumeMesh(nodes, tuple(faces[perm]), owner[perm], neighbour[perm])


def read_vmesh(path):
    """Read the plain-text volume mesh format (``vmesh 1`` header)."""
    lines = [(i, ln.split()) for i, ln in enumerate(Path(path).read_text().splitlines(), start=1)]
    lines = [(i, t) for i, t in lines if t and not t[0].startswith("#")]
    it = iter(lines)

    def expect(key):
        try:
            ln, tok = next(it)
        except StopIteration:
            raise MeshParseError(f"unexpected end of file, expected {key!r}", None, path) from None
        if tok[0] != key or len(tok) != 2:
            raise MeshParseError(f"expected '{key} <count>'", ln, path)
        try:
            return int(tok[1])
        except ValueError:
            raise MeshParseError(f"bad count {tok[1]!r}", ln, path) from None

    if expect("vmesh") != 1:
        raise MeshParseError("unsupported vmesh version", 1, path)
    nodes = []
    for _ in range(expect("nodes")):
        ln, tok = next(it, (None, None))
        if tok is None or len(tok) != 3:
            raise MeshParseError("node line needs 3 coordinates", ln, path)
        try:
            nodes.append([float(x) for x in tok])
        except ValueError:
            raise MeshParseError("bad node coordinates", ln, path) from None
    faces, owner, nb = [], [], []
    for _ in range(expect("faces")):
        ln, tok = next(it, (None, None))
        try:
            vals = [int(x) for x in tok]
            n = vals[0]
            if len(vals) != n + 3:
                raise ValueError
        except (TypeError, ValueError, IndexError):
            raise MeshParseError("face line must be 'n i1..in owner neighbour'", ln, path) from None
        faces.append(vals[1:n + 1])
        owner.append(vals[n + 1])
        nb.append(vals[n + 2])
    extra = next(it, None)
    if extra is not None:
        raise MeshParseError("trailing content", extra[0], path)
    return VolumeMesh(np.asarray(nodes, dtype=float).reshape(-1, 3), tuple(faces), owner, nb)


def write_vmesh(mesh, path):
    out = ["vmesh 1", f"nodes {mesh.n_nodes}"]
    out += ["{:.17g} {:.17g} {:.17g}".format(*p) for p in mesh.nodes]
    out.append(f"faces {mesh.n_faces}")
    for f, o, n in zip(mesh.face_nodes, mesh.owner, mesh.neighbour):
        out.append(" ".join(str(int(x)) for x in (len(f), *f, o, n)))
    Path(path).write_text("\n".join(out) + "\n")


# Quality =====================================================================
@dataclass(frozen=True)
class QualityReport:
    """Mesh-checking indicators. Angles in degrees."""

    min_face_area: float
    min_cell_volume: float
    max_non_orthogonality: float
    avg_non_orthogonality: float
    has_internal_faces: bool = True
    negative_cells: int = 0
    warnings: tuple = ()

    def as_dict(self):
        return {
            "min_face_area": self.min_face_area,
            "min_cell_volume": self.min_cell_volume,
            "max_non_orthogonality": self.max_non_orthogonality,
            "avg_non_orthogonality": self.avg_non_orthogonality,
            "has_internal_faces": self.has_internal_faces,
            "negative_cells": self.negative_cells,
            "warnings": list(self.warnings),
        }


def non_orthogonality(mesh):
    """Angle (degrees) between face area vector and owner->neighbour centroid line, internal faces."""
    _, centroid = mesh._cell_volumes_and_centroids()
    s = mesh.face_area_vectors()[mesh.internal]
    d = centroid[mesh.neighbour[mesh.internal]] - centroid[mesh.owner[mesh.internal]]
    # atan2 keeps small angles accurate where arccos of a near-unit cosine does not
    return np.degrees(np.arctan2(np.linalg.norm(np.cross(s, d), axis=1), np.einsum("ij,ij->i", s, d)))


def quality_report(mesh):
    """Minimum face area / cell volume and max / mean non-orthogonality.

    Boundary faces are included in the minimum face area.
    """
    areas = np.linalg.norm(mesh.face_area_vectors(), axis=1)
    vols = cell_volumes(mesh)
    warnings = []
    neg = int(np.sum(vols <= 0))
    if neg:
        warnings.append(f"{neg} cells with non-positive volume")
    if mesh.internal.any():
        angles = non_orthogonality(mesh)
        max_no, avg_no, has_int = float(angles.max()), float(angles.mean()), True
    else:
        max_no, avg_no, has_int = 0.0, 0.0, False
        warnings.append("no internal faces; non-orthogonality not defined")
    return QualityReport(
        min_face_area=float(areas.min()),
        min_cell_volume=float(vols.min()),
        max_non_orthogonality=max_no,
        avg_non_orthogonality=avg_no,
        has_internal_faces=has_int,
        negative_cells=neg,
        warnings=tuple(warnings),
    )


# Waterline clipping ==========================================================
def clip_triangles_below(tri, waterline_z):
    """Clip triangles to the half-space ``z <= waterline_z``.

    Parameters
    ----------
    tri : (..., t, 3, d) array
        Triangle corners. The first three of the ``d`` channels are x, y, z;
        further channels (field values) are interpolated linearly along cut
        edges.

    Returns
    -------
    sub : (..., t, 2, 3, d) array
        Up to two sub-triangles per input triangle, orientation preserved.
    valid : (..., t, 2) bool array
    """
    tri = np.asarray(tri, dtype=float)
    h = tri[..., 2] - waterline_z
    below = h <= 0
    nb = below.sum(axis=-1)

    # rotate corners so the odd-one-out (the lone below corner when nb == 1,
    # the lone above corner when nb == 2) comes first
    lone = np.where(nb == 1, np.argmax(below, axis=-1), np.argmax(~below, axis=-1))
    rot = (lone[..., None] + np.arange(3)) % 3
    r = np.take_along_axis(tri, rot[..., None], axis=-2)
    hr = np.take_along_axis(h, rot, axis=-1)
    a, b, c = r[..., 0, :], r[..., 1, :], r[..., 2, :]
    ha, hb, hc = hr[..., 0], hr[..., 1], hr[..., 2]

    with np.errstate(invalid="ignore", divide="ignore"):
        t_ab = np.where(ha != hb, ha / (ha - hb), 0.0)[..., None]
        t_ac = np.where(ha != hc, ha / (ha - hc), 0.0)[..., None]
    p_ab = a + t_ab * (b - a)
    p_ac = a + t_ac * (c - a)

    shape = tri.shape[:-2] + (2, 3, tri.shape[-1])
    sub = np.zeros(shape)
    valid = np.zeros(tri.shape[:-2] + (2,), dtype=bool)

    m3 = nb == 3
    sub[m3, 0] = tri[m3]
    valid[m3, 0] = True

    m1 = nb == 1
    sub[m1, 0] = np.stack([a[m1], p_ab[m1], p_ac[m1]], axis=-2)
    valid[m1, 0] = True

    m2 = nb == 2
    sub[m2, 0] = np.stack([p_ab[m2], b[m2], c[m2]], axis=-2)
    sub[m2, 1] = np.stack([p_ab[m2], c[m2], p_ac[m2]], axis=-2)
    valid[m2] = True
    return sub, valid


def _clipped_integrals(tri, waterline_z):
    """Area vectors, centroids and validity of clipped sub-triangles."""
    sub, valid = clip_triangles_below(tri, waterline_z)
    q = sub[..., :3]
    s = 0.5 * np.cross(q[..., 1, :] - q[..., 0, :], q[..., 2, :] - q[..., 0, :])
    s = np.where(valid[..., None], s, 0.0)
    return sub, valid, s


def _volume_from_clipped(sub, s, waterline_z, axis_sum):
    """Divergence-theorem volume of clipped surface plus the planar cap.

    The cap lies in ``z = waterline_z`` with area vector ``-sum(s)`` projected
    on z, so its flux of ``x/3`` is ``waterline_z * A_cap / 3``.
    """
    c = sub[..., :3].mean(axis=-2)
    flux = np.einsum("...k,...k->...", c, s).sum(axis=axis_sum)
    cap_area = -s[..., 2].sum(axis=axis_sum)
    return (flux + waterline_z * cap_area) / 3.0


def immersed_volume(surface, waterline_z, tol=1e-8):
    """Volume of the closed surface below ``z = waterline_z``.

    The surface is clipped at the waterline and closed by the planar cap. A
    non-zero in-plane flux residual ``|sum(n_x dA), sum(n_y dA)| / area``
    means the clipped surface is open somewhere other than the cap.
    """
    tri = surface.vertices[surface.triangles]
    sub, valid, s = _clipped_integrals(tri, waterline_z)
    total_area = np.linalg.norm(s, axis=-1).sum()
    if total_area == 0:
        return 0.0
    residual = float(np.linalg.norm(s[..., :2].sum(axis=(0, 1))) / total_area)
    if residual > tol:
        raise WatertightError(residual, tol)
    return float(_volume_from_clipped(sub, s, waterline_z, axis_sum=(0, 1)))
