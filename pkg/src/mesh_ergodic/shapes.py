"""Procedural test surfaces.

These stand in for scanned assets when none is supplied: a flat grid, an
icosphere, a latitude/longitude sphere, a torus, a lumpy closed blob with
roughly bunny-like proportions, and a three-blade wind turbine built from
disjoint closed parts.
"""

from __future__ import annotations

import numpy as np

from .mesh import TriangleMesh, subdivide_midpoint


def square_grid(n: int = 100, lengths=(1.0, 1.0)) -> TriangleMesh:
    """Regular ``n x n`` vertex grid over ``[0, L1] x [0, L2]`` in the z = 0 plane."""
    L1, L2 = lengths
    xs = np.linspace(0.0, L1, n)
    ys = np.linspace(0.0, L2, n)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel(), np.zeros(n * n)])
    idx = np.arange(n * n).reshape(n, n)
    a = idx[:-1, :-1].ravel()
    b = idx[1:, :-1].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[:-1, 1:].ravel()
    faces = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return TriangleMesh(verts, faces)


def icosahedron(radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    t = (1.0 + 5.0 ** 0.5) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    v = radius * v / np.linalg.norm(v, axis=1, keepdims=True) + np.asarray(center, float)
    return TriangleMesh(v, f)


def icosphere(level: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Icosahedron refined ``level`` times with radial projection (10*4^level + 2 vertices)."""
    mesh = icosahedron(radius, center)
    if level == 0:
        return mesh
    return subdivide_midpoint(mesh, level, project_to_sphere=(np.asarray(center, float), radius))


def uv_sphere(n_rings: int = 70, n_segments: int = 70, radius: float = 1.0,
              center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Latitude/longitude sphere with ``n_rings * n_segments + 2`` vertices.

    The defaults (70 x 70) give 4902 vertices.
    """
    theta = np.pi * np.arange(1, n_rings + 1) / (n_rings + 1)
    phi = 2.0 * np.pi * np.arange(n_segments) / n_segments
    T, P = np.meshgrid(theta, phi, indexing="ij")
    ring = np.column_stack(
        [np.sin(T).ravel() * np.cos(P).ravel(), np.sin(T).ravel() * np.sin(P).ravel(), np.cos(T).ravel()]
    )
    verts = np.vstack([[0.0, 0.0, 1.0], ring, [0.0, 0.0, -1.0]])
    north, south = 0, len(verts) - 1

    def vid(i, j):
        return 1 + i * n_segments + (j % n_segments)

    faces = []
    for j in range(n_segments):
        faces.append([north, vid(0, j), vid(0, j + 1)])
        faces.append([south, vid(n_rings - 1, j + 1), vid(n_rings - 1, j)])
    for i in range(n_rings - 1):
        for j in range(n_segments):
            a, b = vid(i, j), vid(i, j + 1)
            c, d = vid(i + 1, j), vid(i + 1, j + 1)
            faces.append([a, c, d])
            faces.append([a, d, b])
    return TriangleMesh(radius * verts + np.asarray(center, float), np.array(faces))


def torus(major: float = 0.3575, minor: float = 0.1425, n_major: int = 96,
          n_minor: int = 40) -> TriangleMesh:
    """Torus about the z axis; outer radius ``major + minor``, height ``2 * minor``."""
    u = 2.0 * np.pi * np.arange(n_major) / n_major
    w = 2.0 * np.pi * np.arange(n_minor) / n_minor
    U, W = np.meshgrid(u, w, indexing="ij")
    rho = major + minor * np.cos(W)
    verts = np.column_stack(
        [(rho * np.cos(U)).ravel(), (rho * np.sin(U)).ravel(), (minor * np.sin(W)).ravel()]
    )
    i, j = np.meshgrid(np.arange(n_major), np.arange(n_minor), indexing="ij")
    i, j = i.ravel(), j.ravel()
    a = i * n_minor + j
    b = ((i + 1) % n_major) * n_minor + j
    c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
    d = i * n_minor + (j + 1) % n_minor
    faces = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return TriangleMesh(verts, faces)


def blob(level: int = 4, size: float = 1.0, seed: int = 7) -> TriangleMesh:
    """Star-shaped lumpy closed surface scaled into a ``size``-sided box.

    Used as a stand-in for a scanned organic shape (e.g. the Stanford bunny)
    when no asset file is given.
    """
    base = icosphere(level)
    d = base.vertices
    rng = np.random.default_rng(seed)
    r = np.ones(len(d))
    for _ in range(6):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        r += 0.18 * np.exp(-((d @ axis - 1.0) ** 2) / 0.15)
    # two "ears"
    for axis in ([0.35, 0.25, 0.9], [-0.35, 0.25, 0.9]):
        axis = np.asarray(axis) / np.linalg.norm(axis)
        r += 0.45 * np.exp(-((d @ axis - 1.0) ** 2) / 0.02)
    v = d * r[:, None]
    lo, hi = v.min(axis=0), v.max(axis=0)
    v = (v - 0.5 * (lo + hi)) * (size / (hi - lo))
    return TriangleMesh(v, base.faces)


def _box(lo, hi, level: int = 2) -> TriangleMesh:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    v = lo + corners * (hi - lo)
    f = np.array(
        [
            [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],  # x faces
            [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],  # y faces
            [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],  # z faces
        ]
    )
    box = TriangleMesh(v, f)
    return subdivide_midpoint(box, level) if level else box


def _loft(centers, frames, half_widths, half_thickness, n_around: int) -> tuple[np.ndarray, np.ndarray]:
    """Closed tube through elliptical sections; ends are capped with fans."""
    ang = 2.0 * np.pi * np.arange(n_around) / n_around
    rings = []
    for c, (e1, e2), a, b in zip(centers, frames, half_widths, half_thickness):
        rings.append(c + np.outer(a * np.cos(ang), e1) + np.outer(b * np.sin(ang), e2))
    n_sec = len(rings)
    verts = np.vstack(rings + [centers[0][None], centers[-1][None]])
    start, end = n_sec * n_around, n_sec * n_around + 1
    faces = []
    for s in range(n_sec - 1):
        for k in range(n_around):
            a = s * n_around + k
            b = s * n_around + (k + 1) % n_around
            c = (s + 1) * n_around + (k + 1) % n_around
            d = (s + 1) * n_around + k
            faces += [[a, b, c], [a, c, d]]
    for k in range(n_around):
        faces.append([start, (k + 1) % n_around, k])
        last = (n_sec - 1) * n_around
        faces.append([end, last + k, last + (k + 1) % n_around])
    return verts, np.array(faces)


def _orient_outward(verts, faces):
    """Flip winding when a closed part's signed volume is negative."""
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    vol = np.einsum("ij,ij->i", a, np.cross(b, c)).sum()
    return faces if vol > 0 else faces[:, ::-1]


def wind_turbine(dimensions=(25.6, 122.8, 203.1), n_around: int = 20,
                 blade_sections: int = 48, tower_sections: int = 40) -> TriangleMesh:
    """Three-blade horizontal-axis turbine, upwind rotor in the y-z plane.

    Tower, nacelle, hub and each blade are separate closed surfaces that do
    not touch. The assembly is rescaled per axis to ``dimensions`` (x depth,
    y rotor width, z total height, meters).
    """
    parts = []
    hub_z, rotor_x, hub_r, tip_r = 132.2, 9.0, 4.0, 70.9

    # tower: tapered cylinder
    z = np.linspace(0.0, hub_z - 3.0, tower_sections)
    radius = np.interp(z, [0.0, z[-1]], [3.0, 2.0])
    centers = np.column_stack([np.zeros_like(z), np.zeros_like(z), z])
    frames = [(np.array([1.0, 0, 0]), np.array([0, 1.0, 0]))] * len(z)
    parts.append(_loft(centers, frames, radius, radius, 2 * n_around))

    nacelle = _box([-12.6, -2.5, hub_z - 2.5], [4.8, 2.5, hub_z + 2.5], level=3)
    parts.append((np.array(nacelle.vertices), np.array(nacelle.faces)))

    hub = icosphere(2, hub_r, (rotor_x, 0.0, hub_z))
    parts.append((np.array(hub.vertices), np.array(hub.faces)))

    s = np.linspace(hub_r + 0.5, tip_r, blade_sections)
    frac = (s - s[0]) / (s[-1] - s[0])
    chord = 2.2 * (1.0 - frac) + 0.5 * frac
    thick = 0.6 * (1.0 - frac) + 0.15 * frac
    for deg in (90.0, 210.0, 330.0):
        th = np.deg2rad(deg)
        axis = np.array([0.0, np.cos(th), np.sin(th)])
        width_dir = np.array([0.0, -np.sin(th), np.cos(th)])
        centers = np.array([rotor_x, 0.0, hub_z]) + np.outer(s, axis)
        frames = [(width_dir, np.array([1.0, 0.0, 0.0]))] * len(s)
        parts.append(_loft(centers, frames, chord, thick, n_around))

    verts, faces, offset = [], [], 0
    for v, f in parts:
        verts.append(v)
        faces.append(_orient_outward(v, f) + offset)
        offset += len(v)
    v = np.vstack(verts)
    f = np.vstack(faces)
    lo, hi = v.min(axis=0), v.max(axis=0)
    v = (v - lo) * (np.asarray(dimensions, float) / (hi - lo))
    v[:, :2] -= 0.5 * np.asarray(dimensions[:2])  # tower axis near x = y = 0
    return TriangleMesh(v, f)
