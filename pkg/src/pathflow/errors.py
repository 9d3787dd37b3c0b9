"""Exception hierarchy shared across the solver."""


class PathflowError(Exception):
    """Base class for all package errors."""


class CurveSelfIntersection(PathflowError):
    """Polyline has a zero-length segment or two non-adjacent segments meet."""


class MeshingFailure(PathflowError):
    """Constrained triangulation could not be completed."""


class DimensionMismatch(PathflowError):
    """Fields belong to a different mesh generation."""


class SolverStagnation(PathflowError):
    """Linear solve hit its iteration cap before reaching tolerance."""


class NewtonDivergence(PathflowError):
    """Pointwise projection failed to converge; carries the last residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ZeroMass(PathflowError):
    """Boundary data is numerically zero on the mesh."""


class Infeasible(PathflowError):
    """Transport problem with mismatched total masses."""


class NoBracket(PathflowError):
    """Root bracket does not contain a sign change."""


class ConfigError(PathflowError):
    """Base for configuration problems (exit code 2)."""


class ParseError(ConfigError):
    """Config file could not be parsed."""


class ValidationError(ConfigError):
    """Config violates the schema; aggregates all violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid config:\n" + "\n".join(f"  - {v}" for v in self.violations))


class IoError(PathflowError):
    """Output files could not be written."""
