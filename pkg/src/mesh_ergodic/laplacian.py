"""Cotangent stiffness matrix and lumped mass matrix on triangle meshes."""

from __future__ import annotations

import logging

import numpy as np
import scipy.io
import scipy.sparse as sp

from .mesh import TriangleMesh, vertex_areas

logger = logging.getLogger(__name__)

COT_CLAMP = 1e8


def corner_cotangents(mesh: TriangleMesh) -> np.ndarray:
    """Cotangent of the interior angle at each face corner, shape (n, 3)."""
    v, f = mesh.vertices, mesh.faces
    cots = np.empty(f.shape, dtype=float)
    for k in range(3):
        p = v[f[:, k]]
        a = v[f[:, (k + 1) % 3]] - p
        b = v[f[:, (k + 2) % 3]] - p
        cots[:, k] = np.einsum("ij,ij->i", a, b) / np.linalg.norm(np.cross(a, b), axis=1)
    return cots


def assemble_cotan_laplacian(mesh: TriangleMesh) -> sp.csr_matrix:
    """Positive semidefinite cotangent stiffness matrix.

    Off-diagonal ``S[i, j] = -1/2 (cot a + cot b)`` summed over the faces
    incident to edge ``(i, j)``; the diagonal makes every row sum to zero.
    Boundary edges get a single cotangent, which gives natural (Neumann)
    boundary conditions.
    """
    cots = corner_cotangents(mesh)
    n_bad = int((np.abs(cots) > COT_CLAMP).sum())
    if n_bad:
        logger.warning("clamping %d cotangent weights to +/-%g (sliver faces); consider re-meshing",
                       n_bad, COT_CLAMP)
        cots = np.clip(cots, -COT_CLAMP, COT_CLAMP)
    f = mesh.faces
    # corner k is opposite edge (k+1, k+2)
    i = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    j = np.concatenate([f[:, 2], f[:, 0], f[:, 1]])
    w = -0.5 * np.concatenate([cots[:, 0], cots[:, 1], cots[:, 2]])
    m = mesh.n_vertices
    off = sp.coo_matrix((w, (i, j)), shape=(m, m)).tocsr()
    off = off + off.T
    diag = -np.asarray(off.sum(axis=1)).ravel()
    S = (off + sp.diags(diag)).tocsr()
    S.sum_duplicates()
    S.sort_indices()
    return S


def assemble_mass_matrix(mesh: TriangleMesh) -> sp.dia_matrix:
    """Diagonal lumped mass matrix of barycentric vertex areas."""
    return sp.diags(vertex_areas(mesh)).todia()


def export_matrix_market(path, matrix, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), comment=comment)
