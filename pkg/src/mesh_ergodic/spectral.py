"""Laplace-Beltrami eigenbasis of a mesh and projections onto it."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .errors import DimensionError, EigensolverError, ParameterError
from .laplacian import assemble_cotan_laplacian, assemble_mass_matrix
from .mesh import TriangleMesh, mesh_hash

logger = logging.getLogger(__name__)

SHIFT = -1e-8
CLUSTER_GAP = 1e-6
RESIDUAL_TOL = 1e-6
# below this size a dense generalized eigensolve is cheaper and more robust
DENSE_LIMIT = 600


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """``K`` smallest eigenpairs of ``S f = lambda M f`` with ``F^T M F = I``.

    Attributes
    ----------
    eigenvalues : (K,) ascending, nonnegative
    eigenvectors : (m, K); column k is f_k sampled at the vertices
    areas : (m,) diagonal of the lumped mass matrix
    requested_k : the K asked for before extending to the end of an
        eigenvalue cluster
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    areas: np.ndarray
    requested_k: int

    @property
    def K(self) -> int:
        return len(self.eigenvalues)

    @property
    def n_vertices(self) -> int:
        return self.eigenvectors.shape[0]

    def project(self, values) -> np.ndarray:
        return project(self, values)

    def reconstruct(self, coefficients) -> np.ndarray:
        return reconstruct(self, coefficients)


def _mass_diagonal(mass) -> np.ndarray:
    if sp.issparse(mass):
        return np.asarray(mass.diagonal(), dtype=float)
    mass = np.asarray(mass, dtype=float)
    return np.diag(mass).copy() if mass.ndim == 2 else mass


def _cluster_end(lam: np.ndarray, k: int, gap: float) -> int:
    """Smallest k' >= k such that lam[k'-1] and lam[k'] are not in one cluster."""
    scale = max(abs(lam[-1]), 1e-300)
    while k < len(lam):
        a, b = lam[k - 1], lam[k]
        if abs(b - a) <= gap * max(abs(a), abs(b)) + 1e-8 * scale:
            k += 1
        else:
            break
    return k


def _solve(S, areas, n, tolerance, max_iter):
    m = S.shape[0]
    if m <= DENSE_LIMIT or n >= m - 1:
        lam, F = scipy.linalg.eigh(S.toarray(), np.diag(areas), subset_by_index=[0, n - 1])
        return lam, F
    v0 = np.random.default_rng(0).standard_normal(m)
    M = sp.diags(areas).tocsc()
    try:
        lam, F = eigsh(
            S.tocsc(), k=n, M=M, sigma=SHIFT, which="LM", tol=tolerance, v0=v0,
            maxiter=max_iter,
        )
    except ArpackNoConvergence as exc:
        raise EigensolverError(
            f"eigensolver converged {len(exc.eigenvalues)} of {n} eigenpairs",
            n_converged=len(exc.eigenvalues),
        ) from exc
    # Rayleigh-Ritz on the returned subspace: exact M-orthonormality, sorted values
    A = F.T @ (S @ F)
    B = F.T @ (areas[:, None] * F)
    lam, Y = scipy.linalg.eigh(0.5 * (A + A.T), 0.5 * (B + B.T))
    return lam, F @ Y


def compute_eigenbasis(stiffness, mass, K: int = 100, tolerance: float = 0.0,
                       max_iter: int | None = None, extend_clusters: bool = True) -> SpectralBasis:
    """Smallest ``K`` generalized eigenpairs via shift-invert Lanczos.

    When ``extend_clusters`` is set, ``K`` grows until it ends on a gap in
    the spectrum so that no (near-)degenerate eigenspace is cut in half.
    """
    S = sp.csr_matrix(stiffness)
    areas = _mass_diagonal(mass)
    m = S.shape[0]
    if S.shape != (m, m) or areas.shape != (m,):
        raise DimensionError(f"stiffness {S.shape} and mass {areas.shape} are inconsistent")
    if int(K) != K or K < 1:
        raise ParameterError(f"K must be a positive integer, got {K!r}")
    if K >= m:
        raise ParameterError(f"K={K} must be smaller than the vertex count {m}")
    if np.any(areas <= 0):
        raise ParameterError("mass matrix must have a strictly positive diagonal")

    pad = min(8, m - 1 - K) if extend_clusters else 0
    while True:
        n = K + max(pad, 0)
        lam, F = _solve(S, areas, n, tolerance, max_iter)
        k_used = _cluster_end(lam, K, CLUSTER_GAP) if extend_clusters else K
        if k_used < n or n >= m - 1:
            break
        pad = min(2 * pad + 8, m - 1 - K)
    lam, F = lam[:k_used], F[:, :k_used]
    if k_used != K:
        logger.info("extended K from %d to %d to close an eigenvalue cluster", K, k_used)

    top = max(abs(lam[-1]), 1e-300)
    if lam[0] < -1e-9 * top - 1e-12:
        raise EigensolverError(f"negative eigenvalue {lam[0]:g}; stiffness is not PSD",
                               n_converged=k_used)
    lam = np.maximum(lam, 0.0)

    # make the largest-magnitude entry of each eigenvector positive
    idx = np.argmax(np.abs(F), axis=0)
    signs = np.sign(F[idx, np.arange(F.shape[1])])
    signs[signs == 0] = 1.0
    F = F * signs

    MF = areas[:, None] * F
    res = np.linalg.norm(S @ F - MF * lam, axis=0)
    bad = np.flatnonzero(res > RESIDUAL_TOL * np.linalg.norm(MF, axis=0))
    if bad.size:
        raise EigensolverError(
            f"eigenpair residuals too large for modes {bad[:10].tolist()}",
            n_converged=int(bad[0]),
        )
    lam.setflags(write=False)
    F.setflags(write=False)
    areas = areas.copy()
    areas.setflags(write=False)
    return SpectralBasis(lam, F, areas, int(K))


def mesh_eigenbasis(mesh: TriangleMesh, K: int = 100, **kwargs) -> SpectralBasis:
    """Assemble operators for ``mesh`` and compute its eigenbasis."""
    return compute_eigenbasis(assemble_cotan_laplacian(mesh), assemble_mass_matrix(mesh), K, **kwargs)


def project(basis: SpectralBasis, values) -> np.ndarray:
    """Coefficients ``c_k = values^T M f_k``; ``values`` may be (m,) or (m, n)."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != basis.n_vertices or values.ndim > 2:
        raise DimensionError(
            f"expected {basis.n_vertices} per-vertex values, got shape {values.shape}"
        )
    weighted = values * basis.areas if values.ndim == 1 else values * basis.areas[:, None]
    return basis.eigenvectors.T @ weighted


def reconstruct(basis: SpectralBasis, coefficients) -> np.ndarray:
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.shape[0] != basis.K:
        raise DimensionError(f"expected {basis.K} coefficients, got shape {coefficients.shape}")
    return basis.eigenvectors @ coefficients


# ---------------------------------------------------------------------------
# cache


def save_basis(basis: SpectralBasis, path, mesh_digest: str) -> None:
    np.savez(
        path,
        eigenvalues=basis.eigenvalues,
        eigenvectors=basis.eigenvectors,
        areas=basis.areas,
        requested_k=np.int64(basis.requested_k),
        mesh_hash=np.array(mesh_digest),
    )


def load_basis(path, mesh_digest: str, K: int) -> SpectralBasis | None:
    """Return the cached basis if it matches the mesh hash and requested K."""
    path = Path(path)
    if not path.exists():
        return None
    with np.load(path, allow_pickle=False) as data:
        if str(data["mesh_hash"]) != mesh_digest or int(data["requested_k"]) != K:
            return None
        lam = data["eigenvalues"]
        F = data["eigenvectors"]
        areas = data["areas"]
    for a in (lam, F, areas):
        a.setflags(write=False)
    return SpectralBasis(lam, F, areas, int(K))


def cached_eigenbasis(mesh: TriangleMesh, K: int, cache_dir=None, **kwargs) -> SpectralBasis:
    if cache_dir is None:
        return mesh_eigenbasis(mesh, K, **kwargs)
    digest = mesh_hash(mesh)
    path = Path(cache_dir) / f"basis_{digest[:16]}_K{K}.npz"
    basis = load_basis(path, digest, K)
    if basis is not None:
        logger.info("loaded cached eigenbasis %s", path)
        return basis
    basis = mesh_eigenbasis(mesh, K, **kwargs)
    Path(cache_dir).mkdir(parents=True, exist_ok=True)
    save_basis(basis, path, digest)
    return basis
