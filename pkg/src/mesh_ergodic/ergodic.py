"""Ergodic metric on a mesh eigenbasis and its gradient with respect to
trajectory states.

The chain is: Gaussian footprints -> time-averaged statistics -> normalized
coverage -> spectral coefficients -> weighted squared distance to the
information map's coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .analytic import AnalyticBasis, Quadrature, analytic_coefficients, default_quadrature
from .errors import DegenerateCoverageError, DimensionError, DomainError, ParameterError
from .mesh import TriangleMesh, vertex_areas
from .spectral import SpectralBasis, project

Z_FLOOR = 1e-300


@dataclass(frozen=True)
class SensorModel:
    """Isotropic Gaussian sensor of length scale ``sigma`` (m).

    With ``truncate`` set, contributions beyond ``cutoff * sigma`` are dropped.
    """

    sigma: float
    truncate: bool = True
    cutoff: float = 6.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        if not self.cutoff > 0:
            raise ParameterError("cutoff must be positive")

    @property
    def radius(self) -> float:
        return self.cutoff * self.sigma if self.truncate else np.inf


@dataclass(frozen=True, eq=False)
class InformationMap:
    """Per-vertex density normalized so that ``sum(area * density) == 1``."""

    density: np.ndarray

    @classmethod
    def from_values(cls, mesh_or_areas, values) -> "InformationMap":
        areas = (vertex_areas(mesh_or_areas) if isinstance(mesh_or_areas, TriangleMesh)
                 else np.asarray(mesh_or_areas, float))
        values = np.asarray(values, dtype=float)
        if values.shape != areas.shape:
            raise DimensionError(f"map has shape {values.shape}, expected {areas.shape}")
        if np.any(values < 0) or not np.any(values > 0):
            raise ParameterError("information map must be nonnegative with a positive entry")
        d = values / (areas @ values)
        d.setflags(write=False)
        return cls(d)

    @classmethod
    def uniform(cls, mesh: TriangleMesh) -> "InformationMap":
        return cls.from_values(mesh, np.ones(mesh.n_vertices))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``x_0..x_T`` (m), controls ``u_0..u_{T-1}`` (m/s) and step ``dt`` (s)."""

    states: np.ndarray
    dt: float
    controls: np.ndarray | None = None

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.states, dtype=float))
        if x.shape[1] != 3:
            raise DimensionError(f"states must be (T+1, 3), got {x.shape}")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        u = self.controls
        if u is None:
            u = np.diff(x, axis=0) / self.dt
        u = np.asarray(u, dtype=float).reshape(-1, 3)
        if len(u) != len(x) - 1:
            raise DimensionError(f"expected {len(x) - 1} controls, got {len(u)}")
        object.__setattr__(self, "states", x)
        object.__setattr__(self, "controls", u)

    @property
    def T(self) -> int:
        return len(self.states) - 1

    def defects(self) -> np.ndarray:
        x, u = self.states, self.controls
        return x[1:] - x[:-1] - self.dt * u


@dataclass(frozen=True, eq=False)
class CoverageField:
    mu: np.ndarray
    mu_hat: np.ndarray
    Z: float


def spectral_weights(eigenvalues, scheme: str = "exp_decay") -> np.ndarray:
    """Per-mode discount: ``exp(-0.1 sqrt(lam))`` or ``1 / (1 + sqrt(lam))``."""
    lam = np.asarray(eigenvalues, dtype=float)
    if np.any(lam < -1e-9):
        raise ParameterError(f"negative eigenvalue {lam.min():g}")
    root = np.sqrt(np.clip(lam, 0.0, None))
    if scheme == "exp_decay":
        return np.exp(-0.1 * root)
    if scheme == "inverse_sqrt":
        return 1.0 / (1.0 + root)
    raise ParameterError(f"unknown weight scheme {scheme!r}")


def _footprint_matrix(model: SensorModel, states, vertices, tree=None):
    """Footprints ``s[t, i]`` as a dense array or, when truncating, a COO matrix."""
    x = np.atleast_2d(states)
    inv = -0.5 / model.sigma ** 2
    if not model.truncate:
        d2 = ((x[:, None, :] - vertices[None, :, :]) ** 2).sum(-1)
        return np.exp(inv * d2)
    if tree is None:
        tree = cKDTree(vertices)
    # COO keeps zero-distance pairs, and only sums and products are needed downstream
    D = cKDTree(x).sparse_distance_matrix(tree, model.radius, output_type="coo_matrix")
    return sp.coo_matrix((np.exp(inv * D.data ** 2), (D.row, D.col)), shape=(len(x), len(vertices)))


def sensor_footprint(model: SensorModel, x, mesh: TriangleMesh) -> np.ndarray:
    """``exp(-|v_i - x|^2 / (2 sigma^2))`` at every vertex."""
    d2 = ((mesh.vertices - np.asarray(x, float)) ** 2).sum(-1)
    s = np.exp(-0.5 * d2 / model.sigma ** 2)
    if model.truncate:
        s[np.sqrt(d2) > model.radius] = 0.0
    return s


def _states(traj):
    return traj.states if isinstance(traj, Trajectory) else np.atleast_2d(np.asarray(traj, float))


def coverage_field(model: SensorModel, traj, mesh: TriangleMesh, areas=None) -> CoverageField:
    """Uniform time average of the footprints, then normalization over the mesh."""
    x = _states(traj)
    areas = vertex_areas(mesh) if areas is None else areas
    S = _footprint_matrix(model, x, mesh.vertices)
    mu_hat = np.asarray(S.sum(axis=0)).ravel() / len(x)
    Z = float(areas @ mu_hat)
    if not Z > Z_FLOOR:
        raise DegenerateCoverageError("trajectory deposits no sensing effort on the mesh")
    return CoverageField(mu_hat / Z, mu_hat, Z)


def ergodic_metric_value(basis: SpectralBasis, weights, info_map: InformationMap,
                         coverage: CoverageField) -> float:
    """``sum_k weights_k (mu_k - phi_k)^2``."""
    weights = np.asarray(weights, float)
    if weights.shape != (basis.K,):
        raise DimensionError(f"expected {basis.K} weights, got {weights.shape}")
    diff = project(basis, coverage.mu) - project(basis, info_map.density)
    return float(weights @ diff ** 2)


@dataclass(eq=False)
class ErgodicObjective:
    """Reusable evaluator of the ergodic metric and its state gradient.

    Precomputes the map coefficients, the mass-weighted eigenvectors and a
    KD-tree over the vertices so repeated evaluations during optimization
    only pay for the footprints.
    """

    mesh: TriangleMesh
    basis: SpectralBasis
    weights: np.ndarray
    info_map: InformationMap
    model: SensorModel
    _tree: cKDTree = field(init=False, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, float)
        if self.weights.shape != (self.basis.K,):
            raise DimensionError(f"expected {self.basis.K} weights, got {self.weights.shape}")
        if self.basis.n_vertices != self.mesh.n_vertices:
            raise DimensionError("basis and mesh vertex counts differ")
        self.areas = self.basis.areas
        self.MF = self.basis.eigenvectors * self.areas[:, None]
        self.phi_k = self.MF.T @ self.info_map.density
        self._tree = cKDTree(self.mesh.vertices)

    def coefficients(self, states):
        S = _footprint_matrix(self.model, states, self.mesh.vertices, self._tree)
        n = S.shape[0]
        mu_hat = np.asarray(S.sum(axis=0)).ravel() / n
        Z = float(self.areas @ mu_hat)
        if not Z > Z_FLOOR:
            raise DegenerateCoverageError("trajectory deposits no sensing effort on the mesh")
        mu = mu_hat / Z
        return S, mu, Z, self.MF.T @ mu

    def value(self, states) -> float:
        _, _, _, mu_k = self.coefficients(np.atleast_2d(states))
        return float(self.weights @ (mu_k - self.phi_k) ** 2)

    def value_and_grad(self, states):
        """Metric value and ``dE/dx_t`` for every state, shape (T+1, 3)."""
        x = np.atleast_2d(np.asarray(states, float))
        S, mu, Z, mu_k = self.coefficients(x)
        diff = mu_k - self.phi_k
        value = float(self.weights @ diff ** 2)
        g = self.MF @ (2.0 * self.weights * diff)  # dE/dmu
        w = (g - (g @ mu) * self.areas) / Z  # dE/dmu_hat
        wv = w[:, None] * self.mesh.vertices
        SW = S @ wv
        sw = S @ w
        grad = (np.asarray(SW) - np.asarray(sw).reshape(-1, 1) * x) / (len(x) * self.model.sigma ** 2)
        return value, grad


def ergodic_metric_gradient(basis, weights, info_map, model, traj, mesh) -> np.ndarray:
    """Exact ``dE/dx_t`` through footprints, time average and normalization."""
    return ErgodicObjective(mesh, basis, weights, info_map, model).value_and_grad(_states(traj))[1]


# -- continuous-basis evaluation -------------------------------------------


def _domain_offsets(basis: AnalyticBasis, x):
    if basis.domain == "rectangle":
        L = np.asarray(basis.lengths)
        out = np.clip(np.maximum(-x[:, :2], x[:, :2] - L), 0.0, None)
        return np.sqrt((out ** 2).sum(-1) + x[:, 2] ** 2)
    return np.abs(np.linalg.norm(x - basis.center, axis=1) - basis.radius)


def evaluate_analytic_metric(basis: AnalyticBasis, scheme: str, info_map, traj, model: SensorModel,
                             quadrature: Quadrature | None = None,
                             max_offset: float | None = None) -> float:
    """Ergodic metric of ``traj`` in a closed-form basis.

    Footprints are evaluated with the true ambient distance from each state
    to the quadrature points. States farther than ``max_offset`` (default
    ``model.cutoff * sigma``) from the domain raise :class:`DomainError`.
    ``info_map`` is a callable density, samples on the quadrature, or
    ``None`` for uniform.
    """
    x = _states(traj)
    quad = quadrature if quadrature is not None else default_quadrature(basis)
    limit = model.cutoff * model.sigma if max_offset is None else max_offset
    off = _domain_offsets(basis, x)
    if np.any(off > limit):
        raise DomainError(f"state {int(np.argmax(off))} is {off.max():.3g} m from the domain")

    mu_hat = np.zeros(len(quad))
    inv = -0.5 / model.sigma ** 2
    for t in range(len(x)):
        mu_hat += np.exp(inv * ((quad.points - x[t]) ** 2).sum(-1))
    mu_hat /= len(x)
    Z = quad.weights @ mu_hat
    if not Z > Z_FLOOR:
        raise DegenerateCoverageError("trajectory deposits no sensing effort on the domain")
    if info_map is None:
        phi = np.ones(len(quad))
    elif callable(info_map):
        phi = np.asarray(info_map(quad.points), float)
    else:
        phi = np.asarray(info_map, float)
    phi = phi / (quad.weights @ phi)
    mu_k = analytic_coefficients(basis, mu_hat / Z, quad)
    phi_k = analytic_coefficients(basis, phi, quad)
    return float(spectral_weights(basis.eigenvalues, scheme) @ (mu_k - phi_k) ** 2)
