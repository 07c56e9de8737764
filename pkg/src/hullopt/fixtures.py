"""Procedural desk-scale hull and volume-mesh fixtures.

The hull is a closed lofted surface of superelliptic sections, exactly
mirror-symmetric about ``y = 0``, with main particulars of a 1:59.4 container
ship model. The volume mesh is a structured O-grid of hexahedra extruded
outwards from the hull side surface, so its innermost node layer coincides
with hull vertices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SurfaceMesh, cell_volumes, hex_volume_mesh

__all__ = ["HullSpec", "hull_fixture", "volume_fixture", "mirror_permutation", "unit_cube_surface", "icosphere"]


@dataclass(frozen=True)
class HullSpec:
    length: float = 5.976
    beam: float = 0.859
    draught: float = 0.244
    freeboard: float = 0.25
    n_stations: int = 60
    n_ring: int = 40
    exponent: float = 4.0
    end_fraction: float = 0.04
    n_layers: int = 9
    outer_scale: float = 2.5


def _ring_angles(n_ring):
    if n_ring % 2:
        raise ValueError("n_ring must be even for a mirror-symmetric ring")
    theta = 2 * np.pi * (np.arange(n_ring) + 0.5) / n_ring
    mirror = (n_ring // 2 - 1 - np.arange(n_ring)) % n_ring
    return theta, mirror


def _superellipse(theta, e):
    c, s = np.cos(theta), np.sin(theta)
    return np.sign(c) * np.abs(c) ** (2 / e), np.sign(s) * np.abs(s) ** (2 / e)


def _symmetrize(y, mirror):
    """Force y[mirror[k]] == -y[k] bit for bit."""
    y = y.copy()
    first = np.arange(len(mirror)) < mirror
    y[..., mirror[first]] = -y[..., first]
    return y


def _half_breadth(xi, spec):
    """Waterplane taper, fuller at the stern (xi < 0) than at the bow."""
    p = np.where(xi > 0, 2.5, 4.0)
    f = np.sqrt(np.clip(1.0 - np.abs(xi) ** p, 0.0, 1.0))
    return 0.5 * spec.beam * (spec.end_fraction + (1 - spec.end_fraction) * f)


def _hull_rings(spec):
    theta, mirror = _ring_angles(spec.n_ring)
    x = np.linspace(0.0, spec.length, spec.n_stations)
    xi = 2 * x / spec.length - 1
    a = _half_breadth(xi, spec)
    zc = 0.5 * (spec.freeboard - spec.draught)
    c = 0.5 * (spec.freeboard + spec.draught)
    cy, sz = _superellipse(theta, spec.exponent)
    y = _symmetrize(a[:, None] * cy[None, :], mirror)
    z = np.broadcast_to(zc + c * sz[None, :], y.shape)
    xx = np.broadcast_to(x[:, None], y.shape)
    return np.stack([xx, y, z], axis=-1), theta, mirror, zc


def _ring_quads(n_i, n_k, offset=0):
    i, k = np.meshgrid(np.arange(n_i - 1), np.arange(n_k), indexing="ij")
    k1 = (k + 1) % n_k
    v00 = i * n_k + k
    v10 = (i + 1) * n_k + k
    v11 = (i + 1) * n_k + k1
    v01 = i * n_k + k1
    return offset + np.stack([v00, v10, v11, v01], axis=-1).reshape(-1, 4)


def hull_fixture(spec=HullSpec()):
    """Closed hull surface: lofted side plus flat end caps fanned to a centre vertex."""
    rings, _, _, zc = _hull_rings(spec)
    ns, nr = spec.n_stations, spec.n_ring
    verts = rings.reshape(-1, 3)
    stern = np.array([[0.0, 0.0, zc]])
    bow = np.array([[spec.length, 0.0, zc]])
    verts = np.concatenate([verts, stern, bow])
    quads = _ring_quads(ns, nr)
    tris = np.concatenate([quads[:, [0, 1, 2]], quads[:, [0, 2, 3]]])
    k = np.arange(nr)
    cap_s = np.stack([np.full(nr, ns * nr), k, (k + 1) % nr], axis=1)
    last = (ns - 1) * nr
    cap_b = np.stack([np.full(nr, ns * nr + 1), last + (k + 1) % nr, last + k], axis=1)
    tris = np.concatenate([tris, cap_s, cap_b])
    mesh = SurfaceMesh(verts, tris)
    if np.sum(mesh.triangle_area_vectors[:, 0] * mesh.vertices[mesh.triangles].mean(1)[:, 0]) < 0:
        mesh = SurfaceMesh(verts, tris[:, ::-1])
    return mesh


def mirror_permutation(spec=HullSpec()):
    """Vertex permutation of :func:`hull_fixture` under ``y -> -y``."""
    _, mirror = _ring_angles(spec.n_ring)
    ns, nr = spec.n_stations, spec.n_ring
    perm = (np.arange(ns)[:, None] * nr + mirror[None, :]).reshape(-1)
    return np.concatenate([perm, [ns * nr, ns * nr + 1]])


def volume_fixture(spec=HullSpec()):
    """Structured hexahedral O-grid around the hull side surface.

    Node layer 0 is the hull ring surface; the outer layer is an ellipse of
    ``outer_scale`` times the beam / depth around each section.
    """
    rings, theta, mirror, zc = _hull_rings(spec)
    ns, nr, nl = spec.n_stations, spec.n_ring, spec.n_layers
    half_depth = 0.5 * (spec.freeboard + spec.draught)
    outer = np.empty_like(rings)
    outer[..., 0] = rings[..., 0]
    outer[..., 1] = _symmetrize(np.broadcast_to(spec.outer_scale * spec.beam * np.cos(theta), (ns, nr)), mirror)
    outer[..., 2] = zc + spec.outer_scale * 2 * half_depth * np.sin(theta)
    g = (np.arange(nl + 1) / nl) ** 1.5
    nodes = rings[None] + g[:, None, None, None] * (outer - rings)[None]
    nodes[..., 1] = _symmetrize(nodes[..., 1], mirror)
    nodes = nodes.reshape(-1, 3)

    per_layer = ns * nr
    q = _ring_quads(ns, nr)
    hexes = np.concatenate([np.concatenate([q + j * per_layer, q + (j + 1) * per_layer], axis=1)
                            for j in range(nl)])
    mesh = hex_volume_mesh(nodes, hexes)

    if cell_volumes(mesh)[0] < 0:
        mesh = hex_volume_mesh(nodes, hexes[:, [4, 5, 6, 7, 0, 1, 2, 3]])
    return mesh


def unit_cube_surface(lo=0.0, hi=1.0):
    """12-triangle closed cube with outward orientation."""
    v = np.array([[x, y, z] for z in (lo, hi) for y in (lo, hi) for x in (lo, hi)], float)
    # index = x + 2y + 4z
    quads = [(0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4), (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return SurfaceMesh(v, np.array(tris))


def icosphere(subdivisions=3, radius=1.0):
    """Geodesic sphere by repeated midpoint subdivision of an icosahedron."""
    t = (1 + 5**0.5) / 2
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return SurfaceMesh(radius * np.array(verts), np.array(faces))
