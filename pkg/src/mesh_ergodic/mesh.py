"""Triangle mesh container, file I/O and basic integral geometry."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .errors import DimensionError, MeshFormatError, MeshValidationError, ParameterError

logger = logging.getLogger(__name__)

#: faces with area below this (m^2) are rejected
DEGENERATE_AREA = 1e-12


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Validated, immutable triangle mesh.

    Parameters
    ----------
    vertices : (m, 3) array_like
        Vertex positions in meters. 2D input is padded with z = 0.
    faces : (n, 3) array_like of int
        Zero-based vertex indices.
    channels : mapping of str to (m,) array_like, optional
        Named per-vertex scalar channels (e.g. an information density).
    """

    vertices: np.ndarray
    faces: np.ndarray
    channels: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] not in (2, 3):
            raise MeshValidationError(f"vertices must be (m, 3), got shape {v.shape}")
        if v.shape[1] == 2:
            v = np.column_stack([v, np.zeros(len(v))])
        f = np.asarray(self.faces)
        if f.size == 0:
            raise MeshValidationError("mesh has no faces")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshValidationError(f"faces must be (n, 3), got shape {f.shape}")
        if not np.issubdtype(f.dtype, np.integer):
            if not np.all(np.equal(np.mod(f, 1), 0)):
                raise MeshValidationError("face indices must be integers")
        f = f.astype(np.int64)
        if not np.all(np.isfinite(v)):
            raise MeshValidationError("vertex coordinates must be finite")

        bad = np.flatnonzero((f < 0).any(axis=1) | (f >= len(v)).any(axis=1))
        if bad.size:
            raise MeshValidationError(
                f"face index out of range (vertex count {len(v)}) in faces {bad[:10].tolist()}",
                faces=bad,
            )
        bad = np.flatnonzero(
            (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        )
        if bad.size:
            raise MeshValidationError(
                f"faces with repeated vertex indices: {bad[:10].tolist()}", faces=bad
            )
        areas = _face_areas(v, f)
        bad = np.flatnonzero(areas <= DEGENERATE_AREA)
        if bad.size:
            raise MeshValidationError(
                f"degenerate faces (area <= {DEGENERATE_AREA:g}): {bad[:10].tolist()}",
                faces=bad,
            )

        channels = {k: np.asarray(c, dtype=float) for k, c in dict(self.channels).items()}
        for name, c in channels.items():
            if c.shape != (len(v),):
                raise DimensionError(
                    f"channel {name!r} has shape {c.shape}, expected ({len(v)},)"
                )

        used = np.zeros(len(v), dtype=bool)
        used[f.ravel()] = True
        if not used.all():
            logger.warning("dropping %d unreferenced vertices", int((~used).sum()))
            remap = np.cumsum(used) - 1
            v = v[used]
            f = remap[f]
            channels = {k: c[used] for k, c in channels.items()}

        object.__setattr__(self, "vertices", _frozen(v, float))
        object.__setattr__(self, "faces", _frozen(f, np.int64))
        object.__setattr__(
            self,
            "channels",
            MappingProxyType({k: _frozen(c, float) for k, c in channels.items()}),
        )

        counts = edge_face_counts(self)[1]
        if (counts > 2).any():
            logger.warning(
                "non-manifold mesh: %d edges shared by more than two faces",
                int((counts > 2).sum()),
            )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_channels(self, **channels) -> "TriangleMesh":
        merged = dict(self.channels)
        merged.update(channels)
        return TriangleMesh(self.vertices, self.faces, merged)

    def transformed(self, rotation=None, translation=None, scale=1.0) -> "TriangleMesh":
        """Return a copy with ``x -> scale * R x + t`` applied to every vertex."""
        v = self.vertices * scale
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=float).T
        if translation is not None:
            v = v + np.asarray(translation, dtype=float)
        return TriangleMesh(v, self.faces, dict(self.channels))

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def scale(self) -> float:
        """Length of the bounding-box diagonal."""
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))


def _face_areas(v, f):
    e1 = v[f[:, 1]] - v[f[:, 0]]
    e2 = v[f[:, 2]] - v[f[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def face_areas(mesh: TriangleMesh) -> np.ndarray:
    return _face_areas(mesh.vertices, mesh.faces)


def face_normals(mesh: TriangleMesh) -> np.ndarray:
    """Unit face normals following the face winding (right-hand rule)."""
    v, f = mesh.vertices, mesh.faces
    n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def total_area(mesh: TriangleMesh) -> float:
    return float(face_areas(mesh).sum())


def vertex_areas(mesh: TriangleMesh) -> np.ndarray:
    """Barycentric vertex areas: each face gives a third of its area to each corner."""
    a = face_areas(mesh) / 3.0
    return np.bincount(mesh.faces.ravel(), weights=np.repeat(a, 3), minlength=mesh.n_vertices)


def surface_integral(mesh: TriangleMesh, values) -> float:
    """Lumped quadrature ``sum_i area_i * values_i``."""
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.n_vertices,):
        raise DimensionError(
            f"expected {mesh.n_vertices} per-vertex values, got shape {values.shape}"
        )
    return float(vertex_areas(mesh) @ values)


def unique_edges(mesh: TriangleMesh) -> tuple[np.ndarray, np.ndarray]:
    """Sorted unique edges and, for each face corner-opposite edge, its edge id.

    Returns
    -------
    edges : (E, 2) int array with ``edges[:, 0] < edges[:, 1]``
    face_edges : (n, 3) int array; ``face_edges[j, k]`` is the edge opposite corner k
    """
    f = mesh.faces
    half = np.stack([f[:, [1, 2]], f[:, [2, 0]], f[:, [0, 1]]], axis=1).reshape(-1, 2)
    half = np.sort(half, axis=1)
    edges, inverse = np.unique(half, axis=0, return_inverse=True)
    return edges, inverse.reshape(-1, 3)


def edge_face_counts(mesh: TriangleMesh) -> tuple[np.ndarray, np.ndarray]:
    edges, face_edges = unique_edges(mesh)
    return edges, np.bincount(face_edges.ravel(), minlength=len(edges))


def is_watertight(mesh: TriangleMesh) -> bool:
    """True when every edge is shared by exactly two faces."""
    return bool(np.all(edge_face_counts(mesh)[1] == 2))


def mesh_hash(mesh: TriangleMesh) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(mesh.faces, dtype="<i8").tobytes())
    return h.hexdigest()


def subdivide_midpoint(mesh: TriangleMesh, levels: int = 1, project_to_sphere=None) -> TriangleMesh:
    """Split every face into four using edge midpoints, ``levels`` times.

    ``project_to_sphere`` is an optional ``(center, radius)`` pair; when given,
    all vertices (old and new) are pushed radially onto that sphere after each
    level. Per-vertex channels are linearly interpolated to new vertices.
    """
    if int(levels) != levels or levels < 1:
        raise ParameterError(f"levels must be a positive integer, got {levels!r}")
    v = np.array(mesh.vertices)
    f = np.array(mesh.faces)
    channels = {k: np.array(c) for k, c in mesh.channels.items()}
    if project_to_sphere is not None:
        center, radius = project_to_sphere
        center = np.asarray(center, dtype=float)
    for _ in range(int(levels)):
        tmp = TriangleMesh(v, f)
        edges, face_edges = unique_edges(tmp)
        n = len(v)
        v = np.vstack([v, 0.5 * (v[edges[:, 0]] + v[edges[:, 1]])])
        channels = {
            k: np.concatenate([c, 0.5 * (c[edges[:, 0]] + c[edges[:, 1]])])
            for k, c in channels.items()
        }
        m = face_edges + n  # midpoint opposite each corner
        a, b, c = f[:, 0], f[:, 1], f[:, 2]
        ma, mb, mc = m[:, 0], m[:, 1], m[:, 2]
        f = np.concatenate(
            [
                np.stack([a, mc, mb], axis=1),
                np.stack([mc, b, ma], axis=1),
                np.stack([mb, ma, c], axis=1),
                np.stack([ma, mb, mc], axis=1),
            ]
        )
        if project_to_sphere is not None:
            d = v - center
            v = center + radius * d / np.linalg.norm(d, axis=1, keepdims=True)
    return TriangleMesh(v, f, channels)


# ---------------------------------------------------------------------------
# I/O


def load_mesh(path, format: str | None = None) -> TriangleMesh:
    """Read an ASCII OBJ or an ASCII/binary PLY file.

    The format is taken from the file suffix unless given. Extra PLY vertex
    properties become per-vertex channels.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if not path.exists():
        raise FileNotFoundError(path)
    if fmt == "obj":
        return _load_obj(path)
    if fmt == "ply":
        return _load_ply(path)
    raise MeshFormatError(f"unsupported mesh format {fmt!r}")


def _obj_index(token: str, n_vertices: int, lineno: int) -> int:
    try:
        i = int(token.split("/")[0])
    except ValueError:
        raise MeshFormatError(f"bad face index {token!r}", lineno) from None
    if i == 0:
        raise MeshFormatError("OBJ indices are 1-based; found 0", lineno)
    # negative indices count back from the most recent vertex
    return i - 1 if i > 0 else n_vertices + i


def _load_obj(path: Path) -> TriangleMesh:
    verts, faces, face_lines = [], [], []
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshFormatError("vertex record needs 3 coordinates", lineno)
                try:
                    verts.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise MeshFormatError(f"bad vertex coordinates {parts[1:4]}", lineno) from None
            elif tag == "f":
                idx = [_obj_index(t, len(verts), lineno) for t in parts[1:]]
                if len(idx) < 3:
                    raise MeshFormatError("face record needs at least 3 indices", lineno)
                for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0], idx[k], idx[k + 1]])
                    face_lines.append(lineno)
    if not verts:
        raise MeshFormatError("no vertex records found")
    faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
    bad = np.flatnonzero((faces < 0).any(axis=1) | (faces >= len(verts)).any(axis=1))
    if bad.size:
        raise MeshValidationError(
            f"face {bad[0]} (line {face_lines[bad[0]]}) references a vertex outside "
            f"1..{len(verts)}",
            faces=bad,
        )
    return TriangleMesh(np.array(verts), faces)


def _load_ply(path: Path) -> TriangleMesh:
    from plyfile import PlyData, PlyParseError

    try:
        ply = PlyData.read(str(path))
    except PlyParseError as exc:
        raise MeshFormatError(str(exc), getattr(exc, "row", None)) from exc
    except (ValueError, EOFError) as exc:
        raise MeshFormatError(f"cannot parse PLY: {exc}") from exc
    try:
        vel = ply["vertex"]
        fel = ply["face"]
    except KeyError as exc:
        raise MeshFormatError(f"PLY file lacks element {exc}") from None
    names = [p.name for p in vel.properties]
    for axis in "xyz":
        if axis not in names:
            raise MeshFormatError(f"PLY vertex element lacks property {axis!r}")
    verts = np.column_stack([np.asarray(vel[a], dtype=float) for a in "xyz"])
    channels = {
        n: np.asarray(vel[n], dtype=float)
        for n in names
        if n not in ("x", "y", "z") and np.ndim(vel[n][0]) == 0
    }
    list_prop = next((p.name for p in fel.properties if p.name in ("vertex_indices", "vertex_index")), None)
    if list_prop is None:
        raise MeshFormatError("PLY face element lacks vertex_indices")
    raw = fel[list_prop]
    lengths = np.array([len(r) for r in raw])
    if len(raw) and np.any(lengths != 3):
        raise MeshFormatError(f"PLY face {int(np.flatnonzero(lengths != 3)[0])} is not a triangle")
    faces = np.array([np.asarray(r) for r in raw], dtype=np.int64).reshape(-1, 3)
    return TriangleMesh(verts, faces, channels)


def save_ply(mesh: TriangleMesh, path, channels: Mapping[str, np.ndarray] | None = None,
             binary: bool = True) -> None:
    """Write the mesh with its channels (plus any extra ``channels``) as PLY."""
    from plyfile import PlyData, PlyElement

    chans = dict(mesh.channels)
    if channels:
        chans.update({k: np.asarray(c, dtype=float) for k, c in channels.items()})
    for k, c in chans.items():
        if np.shape(c) != (mesh.n_vertices,):
            raise DimensionError(f"channel {k!r} has wrong length")
    dtype = [("x", "f8"), ("y", "f8"), ("z", "f8")] + [(k, "f8") for k in chans]
    vdata = np.empty(mesh.n_vertices, dtype=dtype)
    for i, a in enumerate("xyz"):
        vdata[a] = mesh.vertices[:, i]
    for k, c in chans.items():
        vdata[k] = c
    fdata = np.empty(mesh.n_faces, dtype=[("vertex_indices", "i4", (3,))])
    fdata["vertex_indices"] = mesh.faces
    ply = PlyData(
        [PlyElement.describe(vdata, "vertex"), PlyElement.describe(fdata, "face")],
        text=not binary,
    )
    ply.write(str(path))


def save_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"v {x!r} {y!r} {z!r}\n")
        for a, b, c in (mesh.faces + 1).tolist():
            fh.write(f"f {a} {b} {c}\n")
