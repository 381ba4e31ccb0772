"""Exception types shared across the package."""


class MiuraoriError(Exception):
    """Base class for all package errors."""


class DomainError(MiuraoriError):
    """Parameter outside the valid domain of a surface."""


class SingularityError(MiuraoriError):
    """Degenerate tangent plane or other geometric singularity."""


class RegistryError(MiuraoriError):
    """Unknown builtin surface name."""


class ExpressionError(MiuraoriError):
    """Syntax or validation failure in a surface expression."""

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class ConstructionError(MiuraoriError):
    """Initial tessellation cannot be built as requested."""


class BindingError(MiuraoriError):
    """Invalid vertex binding or failed surface projection."""


class AssemblyError(MiuraoriError):
    """Constraint system cannot be assembled."""


class DegeneracyError(MiuraoriError):
    """Geometric degeneracy (zero-length edge, collapsed triangle)."""


class SolverError(MiuraoriError):
    """Unrecoverable numerical failure inside the solver."""


class KinematicsError(MiuraoriError):
    """Rigid folding reconstruction failed or is inconsistent."""


class TopologyError(MiuraoriError):
    """Operation applied to an edge/facet of the wrong kind."""


class ConfigError(MiuraoriError):
    """Design configuration file is invalid."""

    def __init__(self, message, path=None):
        if path:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path


class ExportError(MiuraoriError):
    """Output file could not be written."""
