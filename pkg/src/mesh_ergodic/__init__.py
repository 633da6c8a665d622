"""Ergodic coverage planning over triangle-mesh surfaces."""

from .errors import (
    DegenerateCoverageError,
    DimensionError,
    DomainError,
    EigensolverError,
    MeshErgodicError,
    MeshFormatError,
    MeshValidationError,
    ParameterError,
)
from .mesh import TriangleMesh, load_mesh

__all__ = [
    "DegenerateCoverageError",
    "DimensionError",
    "DomainError",
    "EigensolverError",
    "MeshErgodicError",
    "MeshFormatError",
    "MeshValidationError",
    "ParameterError",
    "TriangleMesh",
    "load_mesh",
]

__version__ = "0.1.0"
