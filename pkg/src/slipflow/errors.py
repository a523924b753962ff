"""Exception types used across the solver pipeline."""


class SlipflowError(Exception):
    """Base class for all package errors."""


class GeometryError(SlipflowError):
    """Degenerate or inconsistent boundary geometry."""


class ConfigurationError(SlipflowError):
    """Invalid run configuration or generator parameters."""


class MeshError(SlipflowError):
    """Mesh generation or validity failure."""


class MeshImportError(MeshError):
    """Imported mesh files are malformed or do not match the domain."""


class DataError(SlipflowError):
    """Problem data violates a precondition (signs, symmetry, ...)."""


class CompatibilityError(DataError):
    """Boundary data violates the zero-total-flux compatibility condition."""


class SolverError(SlipflowError):
    """Linear or eigenvalue solve failed."""


class NonConvergenceError(SolverError):
    """Nonlinear iteration failed to reach the residual tolerance."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class BranchDegeneracyError(SolverError):
    """Singular Newton matrix on a solution continuum; suggests a circulation pin."""


class MultivaluedStreamError(SlipflowError):
    """Nonzero component fluxes obstruct a single-valued stream function."""
