"""Exception hierarchy shared across the package."""


class MeshErgodicError(Exception):
    """Base class for all package errors."""


class MeshFormatError(MeshErgodicError):
    """A mesh file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MeshValidationError(MeshErgodicError):
    """Mesh data violates a structural invariant."""

    def __init__(self, message, faces=None):
        self.faces = [] if faces is None else list(faces)
        super().__init__(message)


class DimensionError(MeshErgodicError, ValueError):
    """Array lengths do not match."""


class ParameterError(MeshErgodicError, ValueError):
    """Invalid configuration or argument value."""


class DomainError(MeshErgodicError, ValueError):
    """A point lies outside the domain of an analytic basis."""


class EigensolverError(MeshErgodicError):
    """The eigensolver did not converge."""

    def __init__(self, message, n_converged=0):
        self.n_converged = n_converged
        super().__init__(message)


class DegenerateCoverageError(MeshErgodicError):
    """The trajectory deposits (numerically) no sensing effort on the mesh."""
