"""Signed distance from ambient points to a triangle mesh.

A median-split bounding-volume hierarchy over faces prunes the search;
queries are processed in batches, one tree level at a time, with all
point-triangle tests vectorized. Signs come from angle-weighted
pseudonormals of the closest feature (face, edge or vertex).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriangleMesh, edge_face_counts, face_normals, unique_edges

logger = logging.getLogger(__name__)

LEAF_SIZE = 8
ON_SURFACE = 1e-9

# closest-feature codes returned by closest_point_on_triangles
FACE, VERT_A, VERT_B, VERT_C, EDGE_AB, EDGE_BC, EDGE_CA = range(7)


@dataclass(eq=False)
class DistanceIndex:
    mesh: TriangleMesh
    signed: bool
    node_lo: np.ndarray
    node_hi: np.ndarray
    node_left: np.ndarray  # -1 for leaves
    node_right: np.ndarray
    leaf_start: np.ndarray
    leaf_count: np.ndarray
    face_order: np.ndarray
    face_normals: np.ndarray
    edge_normals: np.ndarray
    vertex_normals: np.ndarray
    face_edges: np.ndarray
    warnings: list = field(default_factory=list)

    def leaves(self):
        return np.flatnonzero(self.node_left < 0)


def closest_point_on_triangles(p, a, b, c):
    """Closest points on triangles ``(a, b, c)`` to points ``p`` (all (n, 3)).

    Returns the closest points and the feature code of the Voronoi region
    they fall in.
    """
    ab, ac, ap = b - a, c - a, p - a
    bp, cp = p - b, p - c

    def dot(u, v):
        return np.einsum("ij,ij->i", u, v)

    d1, d2 = dot(ab, ap), dot(ac, ap)
    d3, d4 = dot(ab, bp), dot(ac, bp)
    d5, d6 = dot(ab, cp), dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    code = np.full(len(p), -1, dtype=np.int8)
    todo = np.ones(len(p), dtype=bool)

    def assign(mask, pts, k):
        m = mask & todo
        out[m] = pts[m] if pts.ndim == 2 else pts
        code[m] = k
        todo[m] = False

    assign((d1 <= 0) & (d2 <= 0), a, VERT_A)
    assign((d3 >= 0) & (d4 <= d3), b, VERT_B)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab, EDGE_AB)
        assign((d6 >= 0) & (d5 <= d6), c, VERT_C)
        w = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac, EDGE_CA)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), b + w[:, None] * (c - b), EDGE_BC)
        denom = 1.0 / (va + vb + vc)
        face_pt = a + (vb * denom)[:, None] * ab + (vc * denom)[:, None] * ac
    assign(todo.copy(), face_pt, FACE)
    return out, code


def _pseudonormals(mesh: TriangleMesh):
    v, f = mesh.vertices, mesh.faces
    fn = face_normals(mesh)
    vn = np.zeros_like(v)
    for k in range(3):
        e1 = v[f[:, (k + 1) % 3]] - v[f[:, k]]
        e2 = v[f[:, (k + 2) % 3]] - v[f[:, k]]
        cosang = np.einsum("ij,ij->i", e1, e2) / (np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1))
        ang = np.arccos(np.clip(cosang, -1.0, 1.0))
        np.add.at(vn, f[:, k], ang[:, None] * fn)
    edges, face_edges = unique_edges(mesh)
    en = np.zeros((len(edges), 3))
    for k in range(3):
        np.add.at(en, face_edges[:, k], fn)

    def unit(x):
        n = np.linalg.norm(x, axis=1, keepdims=True)
        n[n == 0] = 1.0
        return x / n

    return fn, unit(en), unit(vn), face_edges


def _build_bvh(mesh: TriangleMesh):
    tri = mesh.vertices[mesh.faces]
    tlo, thi = tri.min(axis=1), tri.max(axis=1)
    cent = tri.mean(axis=1)
    order = np.arange(mesh.n_faces)
    lo, hi, left, right, start, count = [], [], [], [], [], []
    stack = [(0, mesh.n_faces, -1, 0)]  # (begin, end, parent, side)
    while stack:
        s, e, parent, side = stack.pop()
        node = len(lo)
        idx = order[s:e]
        lo.append(tlo[idx].min(axis=0))
        hi.append(thi[idx].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(s)
        count.append(e - s)
        if parent >= 0:
            (left if side == 0 else right)[parent] = node
        if e - s <= LEAF_SIZE:
            continue
        c = cent[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        half = (e - s) // 2
        part = np.argpartition(c[:, axis], half, kind="introselect")
        order[s:e] = idx[part]
        stack.append((s + half, e, node, 1))
        stack.append((s, s + half, node, 0))
    return (np.array(lo), np.array(hi), np.array(left), np.array(right),
            np.array(start), np.array(count), order)


def build_distance_index(mesh: TriangleMesh) -> DistanceIndex:
    """BVH plus pseudonormal tables; signed only when the mesh is watertight."""
    counts = edge_face_counts(mesh)[1]
    signed = bool(np.all(counts == 2))
    warnings = []
    if not signed:
        msg = (f"mesh is not watertight ({int((counts != 2).sum())} edges not shared by exactly "
               "two faces); distances are unsigned")
        logger.warning(msg)
        warnings.append(msg)
    lo, hi, left, right, start, count, order = _build_bvh(mesh)
    fn, en, vn, fe = _pseudonormals(mesh)
    return DistanceIndex(mesh, signed, lo, hi, left, right, start, count, order, fn, en, vn, fe, warnings)


def _closest_faces(index: DistanceIndex, x: np.ndarray):
    """Index of a closest face for every query point (exact)."""
    mesh = index.mesh
    v, f = mesh.vertices, mesh.faces
    n = len(x)
    # upper bound from the nearest vertex, which lies on the surface
    d_vert, nearest = cKDTree(v).query(x)
    ub2 = d_vert ** 2 * (1 + 1e-12) + 1e-300
    vert_face = np.empty(mesh.n_vertices, dtype=np.int64)
    vert_face[f.ravel()] = np.repeat(np.arange(mesh.n_faces), 3)
    best = vert_face[nearest]
    best_d2 = np.full(n, np.inf)

    qs = np.arange(n)
    nodes = np.zeros(n, dtype=np.int64)
    while len(qs):
        gap = np.maximum(index.node_lo[nodes] - x[qs], 0.0) + np.maximum(x[qs] - index.node_hi[nodes], 0.0)
        keep = (gap ** 2).sum(-1) <= ub2[qs]
        qs, nodes = qs[keep], nodes[keep]
        is_leaf = index.node_left[nodes] < 0
        lq, ln = qs[is_leaf], nodes[is_leaf]
        if len(lq):
            cnt = index.leaf_count[ln]
            pq = np.repeat(lq, cnt)
            offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
            pf = index.face_order[np.repeat(index.leaf_start[ln], cnt) + offs]
            tri = f[pf]
            cp, _ = closest_point_on_triangles(x[pq], v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]])
            d2 = ((x[pq] - cp) ** 2).sum(-1)
            o = np.lexsort((pf, d2, pq))
            pq, pf, d2 = pq[o], pf[o], d2[o]
            first = np.ones(len(pq), dtype=bool)
            first[1:] = pq[1:] != pq[:-1]
            pq, pf, d2 = pq[first], pf[first], d2[first]
            better = (d2 < best_d2[pq]) | ((d2 == best_d2[pq]) & (pf < best[pq]))
            best[pq[better]] = pf[better]
            best_d2[pq[better]] = d2[better]
            ub2[pq] = np.minimum(ub2[pq], d2)
        iq, inn = qs[~is_leaf], nodes[~is_leaf]
        qs = np.concatenate([iq, iq])
        nodes = np.concatenate([index.node_left[inn], index.node_right[inn]])
    return best


def signed_distances(index: DistanceIndex, points):
    """Batched query; returns ``(d, closest, grad)`` with shapes (n,), (n, 3), (n, 3)."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    mesh = index.mesh
    v, f = mesh.vertices, mesh.faces
    fid = _closest_faces(index, x)
    tri = f[fid]
    cp, code = closest_point_on_triangles(x, v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]])

    normal = index.face_normals[fid].copy()
    for k, vcode in enumerate((VERT_A, VERT_B, VERT_C)):
        m = code == vcode
        normal[m] = index.vertex_normals[tri[m, k]]
    # edge opposite corner k: BC <-> 0, CA <-> 1, AB <-> 2
    for k, ecode in enumerate((EDGE_BC, EDGE_CA, EDGE_AB)):
        m = code == ecode
        normal[m] = index.edge_normals[index.face_edges[fid[m], k]]

    diff = x - cp
    dist = np.linalg.norm(diff, axis=1)
    on = dist < ON_SURFACE
    if index.signed:
        sign = np.where(np.einsum("ij,ij->i", diff, normal) < 0, -1.0, 1.0)
    else:
        sign = np.ones(len(x))
    grad = np.empty_like(x)
    safe = np.where(on, 1.0, dist)
    grad[~on] = (diff / safe[:, None] * sign[:, None])[~on]
    grad[on] = normal[on]
    return sign * dist, cp, grad


def signed_distance(index: DistanceIndex, x):
    """Single query: ``(d, closest_point, grad)``; negative inside closed meshes."""
    d, cp, g = signed_distances(index, np.asarray(x, float)[None])
    return float(d[0]), cp[0], g[0]


def export_distance_csv(index: DistanceIndex, states, path) -> None:
    d, cp, _ = signed_distances(index, states)
    data = np.column_stack([np.arange(len(d)), d, cp])
    np.savetxt(path, data, delimiter=",", header="t,d,cx,cy,cz", comments="", fmt="%.17g")
