"""Exception types shared across the package."""


class FsglError(Exception):
    """Base class for all package-specific errors."""


class StructureError(FsglError, ValueError):
    """A structural object (grid, mask, partition) is malformed."""


class ValidationError(FsglError, ValueError):
    """Inputs violate a documented precondition."""


class InternalSolverError(FsglError, RuntimeError):
    """An internal solver invariant was violated; carries diagnostics."""
