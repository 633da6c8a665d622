"""Closed-form orthonormal bases: Neumann cosines on a rectangle, real
spherical harmonics on a sphere, plus the quadrature rules used with them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParameterError
from .mesh import TriangleMesh, vertex_areas


@dataclass(frozen=True)
class Quadrature:
    """Points and weights on an analytic domain.

    ``axes`` is set for tensor-product grids on a rectangle and holds
    ``((x1, w1), (x2, w2))``; the flat ``points``/``weights`` enumerate the
    grid in ``ij`` order.
    """

    points: np.ndarray
    weights: np.ndarray
    axes: tuple | None = None

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True, eq=False)
class AnalyticBasis:
    """Mode table for a rectangle ``[0, L1] x [0, L2]`` or a sphere.

    ``modes`` holds ``(k1, k2)`` or ``(l, m)`` pairs sorted by eigenvalue.
    """

    domain: str
    modes: np.ndarray
    eigenvalues: np.ndarray
    lengths: tuple = (1.0, 1.0)
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 1.0

    @property
    def K(self) -> int:
        return len(self.modes)

    @classmethod
    def rectangle(cls, lengths=(1.0, 1.0), K: int = 100) -> "AnalyticBasis":
        """First ``K`` cosine modes in ascending eigenvalue order.

        Ties are broken by ``(k1, k2)``; K is extended to include every mode
        sharing the K-th eigenvalue.
        """
        L1, L2 = map(float, lengths)
        if K < 1:
            raise ParameterError("K must be positive")
        n = int(np.ceil(2.0 * np.sqrt(K) * max(L1, L2) / min(L1, L2))) + 2
        k1, k2 = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        k1, k2 = k1.ravel(), k2.ravel()
        lam = np.pi ** 2 * ((k1 / L1) ** 2 + (k2 / L2) ** 2)
        order = np.lexsort((k2, k1, lam))
        lam_k = lam[order][K - 1]
        keep = order[lam[order] <= lam_k * (1 + 1e-12)]
        return cls("rectangle", np.stack([k1[keep], k2[keep]], 1), lam[keep], (L1, L2))

    @classmethod
    def sphere(cls, center=(0.0, 0.0, 0.0), radius: float = 1.0, max_degree: int = 9) -> "AnalyticBasis":
        """All real harmonics with ``l <= max_degree``: ``(max_degree + 1)^2`` modes."""
        modes = np.array([(l, m) for l in range(max_degree + 1) for m in range(-l, l + 1)])
        lam = modes[:, 0] * (modes[:, 0] + 1) / radius ** 2
        return cls("sphere", modes, lam.astype(float), center=np.asarray(center, float),
                   radius=float(radius))

    # -- evaluation -------------------------------------------------------

    def evaluate(self, points) -> np.ndarray:
        """All modes at ``points``; returns shape (n_points, K)."""
        if self.domain == "rectangle":
            return _fourier_all(self, points)
        return _sph_all(self, points)

    def to_json(self, coefficients) -> str:
        return json.dumps(
            {
                "domain": self.domain,
                "modes": self.modes.tolist(),
                "eigenvalues": self.eigenvalues.tolist(),
                "coefficients": np.asarray(coefficients, float).tolist(),
            }
        )


def _check_rectangle(basis, w):
    w = np.atleast_2d(np.asarray(w, dtype=float))[:, :2]
    L = np.asarray(basis.lengths)
    tol = 1e-9 * L
    if np.any(w < -tol) or np.any(w > L + tol):
        raise DomainError(f"point outside [0, {L[0]}] x [0, {L[1]}]")
    return w


def _norm_h(basis, k1, k2):
    L1, L2 = basis.lengths
    return np.sqrt(L1 * L2 * np.where(k1 > 0, 0.5, 1.0) * np.where(k2 > 0, 0.5, 1.0))


def fourier_eval(basis: AnalyticBasis, mode, w) -> float:
    """``prod_i cos(k_i pi w_i / L_i) / h_k`` with ``h_k`` the L2 normalizer."""
    if basis.domain != "rectangle":
        raise ParameterError("fourier_eval needs a rectangle basis")
    w = _check_rectangle(basis, w)[0]
    k1, k2 = mode
    L1, L2 = basis.lengths
    return float(np.cos(k1 * np.pi * w[0] / L1) * np.cos(k2 * np.pi * w[1] / L2) / _norm_h(basis, k1, k2))


def _fourier_all(basis, points):
    w = _check_rectangle(basis, points)
    k1, k2 = basis.modes[:, 0], basis.modes[:, 1]
    L1, L2 = basis.lengths
    c1 = np.cos(np.pi * np.outer(w[:, 0], k1) / L1)
    c2 = np.cos(np.pi * np.outer(w[:, 1], k2) / L2)
    return c1 * c2 / _norm_h(basis, k1, k2)


def normalized_legendre(lmax: int, x) -> np.ndarray:
    """Orthonormal associated Legendre values, shape (lmax+1, lmax+1, n).

    ``P[l, m]`` is normalised so that ``P[l, m](cos t) e^{i m p}`` has unit
    L2 norm on the unit sphere; no Condon-Shortley phase.
    """
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    P = np.zeros((lmax + 1, lmax + 1) + x.shape)
    P[0, 0] = 1.0 / np.sqrt(4.0 * np.pi)
    for m in range(1, lmax + 1):
        P[m, m] = np.sqrt((2 * m + 1) / (2 * m)) * s * P[m - 1, m - 1]
    for m in range(0, lmax):
        P[m + 1, m] = np.sqrt(2 * m + 3) * x * P[m, m]
    for m in range(0, lmax + 1):
        for l in range(m + 2, lmax + 1):
            a = np.sqrt((4 * l * l - 1) / (l * l - m * m))
            b = np.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
            P[l, m] = a * (x * P[l - 1, m] - b * P[l - 2, m])
    return P


def _sphere_directions(basis, points, rtol=1e-6):
    p = np.atleast_2d(np.asarray(points, dtype=float)) - basis.center
    r = np.linalg.norm(p, axis=1)
    if np.any(np.abs(r - basis.radius) > rtol * basis.radius):
        raise DomainError(f"point not on the sphere of radius {basis.radius}")
    return p / r[:, None]


def _sph_all(basis, points):
    d = _sphere_directions(basis, points)
    lmax = int(basis.modes[:, 0].max())
    P = normalized_legendre(lmax, d[:, 2])
    phi = np.arctan2(d[:, 1], d[:, 0])
    out = np.empty((len(d), basis.K))
    for k, (l, m) in enumerate(basis.modes):
        if m == 0:
            out[:, k] = P[l, 0]
        elif m > 0:
            out[:, k] = np.sqrt(2.0) * P[l, m] * np.cos(m * phi)
        else:
            out[:, k] = np.sqrt(2.0) * P[l, -m] * np.sin(-m * phi)
    return out / basis.radius


def spherical_harmonic_eval(basis: AnalyticBasis, mode, w) -> float:
    """Real harmonic ``Y_lm`` of the direction of ``w``, scaled by ``1/r``."""
    if basis.domain != "sphere":
        raise ParameterError("spherical_harmonic_eval needs a sphere basis")
    l, m = mode
    single = AnalyticBasis("sphere", np.array([[l, m]]), np.array([l * (l + 1) / basis.radius ** 2]),
                           center=basis.center, radius=basis.radius)
    return float(_sph_all(single, w)[0, 0])


# -- quadrature -----------------------------------------------------------


def rectangle_quadrature(lengths=(1.0, 1.0), n: int = 256) -> Quadrature:
    """Tensor Gauss-Legendre rule with ``n`` nodes per axis."""
    x, w = np.polynomial.legendre.leggauss(n)
    axes = []
    for L in lengths:
        axes.append((0.5 * L * (x + 1.0), 0.5 * L * w))
    (x1, w1), (x2, w2) = axes
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    pts = np.column_stack([X1.ravel(), X2.ravel(), np.zeros(X1.size)])
    return Quadrature(pts, np.outer(w1, w2).ravel(), tuple(axes))


def sphere_quadrature(center=(0.0, 0.0, 0.0), radius: float = 1.0, n: int = 64) -> Quadrature:
    """Gauss-Legendre in ``cos(theta)`` times ``2n`` uniform longitudes.

    Exact for spherical polynomials of degree ``< 2n``.
    """
    x, w = np.polynomial.legendre.leggauss(n)
    phi = 2.0 * np.pi * np.arange(2 * n) / (2 * n)
    X, P = np.meshgrid(x, phi, indexing="ij")
    s = np.sqrt(1.0 - X ** 2)
    d = np.column_stack([(s * np.cos(P)).ravel(), (s * np.sin(P)).ravel(), X.ravel()])
    weights = np.outer(w, np.full(2 * n, np.pi / n)).ravel() * radius ** 2
    return Quadrature(np.asarray(center, float) + radius * d, weights)


def mesh_quadrature(mesh: TriangleMesh, center=None, radius=None) -> Quadrature:
    """Lumped vertex quadrature; vertices are pushed radially onto a sphere if given."""
    pts = np.array(mesh.vertices)
    if radius is not None:
        c = np.zeros(3) if center is None else np.asarray(center, float)
        d = pts - c
        pts = c + radius * d / np.linalg.norm(d, axis=1, keepdims=True)
    return Quadrature(pts, vertex_areas(mesh))


def analytic_coefficients(basis: AnalyticBasis, density, quadrature: Quadrature) -> np.ndarray:
    """Quadrature projection ``int f_k(w) density(w) dw`` for every mode.

    ``density`` is either samples at the quadrature points or a callable
    taking an (n, 3) point array.
    """
    if len(quadrature) == 0:
        raise ParameterError("empty quadrature grid")
    values = density(quadrature.points) if callable(density) else np.asarray(density, float)
    if values.shape != (len(quadrature),):
        raise ParameterError(f"density has shape {values.shape}, expected ({len(quadrature)},)")
    if basis.domain == "rectangle" and quadrature.axes is not None:
        (x1, w1), (x2, w2) = quadrature.axes
        _check_rectangle(basis, np.column_stack([x1, x1 * 0]))
        _check_rectangle(basis, np.column_stack([x2 * 0, x2]))
        L1, L2 = basis.lengths
        k1u, inv1 = np.unique(basis.modes[:, 0], return_inverse=True)
        k2u, inv2 = np.unique(basis.modes[:, 1], return_inverse=True)
        C1 = np.cos(np.pi * np.outer(k1u, x1) / L1) * w1
        C2 = np.cos(np.pi * np.outer(k2u, x2) / L2) * w2
        G = C1 @ values.reshape(len(x1), len(x2)) @ C2.T
        return G[inv1, inv2] / _norm_h(basis, basis.modes[:, 0], basis.modes[:, 1])
    out = np.zeros(basis.K)
    chunk = max(1, 4_000_000 // max(basis.K, 1))
    for s in range(0, len(quadrature), chunk):
        sl = slice(s, s + chunk)
        out += basis.evaluate(quadrature.points[sl]).T @ (quadrature.weights[sl] * values[sl])
    return out


def default_quadrature(basis: AnalyticBasis, n: int | None = None) -> Quadrature:
    if basis.domain == "rectangle":
        return rectangle_quadrature(basis.lengths, n or 256)
    lmax = int(basis.modes[:, 0].max())
    return sphere_quadrature(basis.center, basis.radius, n or max(64, lmax + 16))
