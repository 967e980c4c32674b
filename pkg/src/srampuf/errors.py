"""Exception types shared across the package."""


class SramPufError(Exception):
    """Base class for all package-specific errors."""


class ParameterDomainError(SramPufError, ValueError):
    """An input parameter is outside its documented domain (non-finite,
    wrong sign, out of range)."""


class NumericError(SramPufError, RuntimeError):
    """A numerical routine failed to converge or produced an unusable
    result (root finder, degenerate equilibrium structure)."""


class IntegrationError(NumericError):
    """Transient integration became unstable; retry with a smaller dt."""


class ModelIntegrityError(SramPufError, RuntimeError):
    """An internal consistency check failed in a way that indicates a
    broken device model rather than bad user input."""


class InputMismatchError(SramPufError, ValueError):
    """Record sets passed to an aggregation cover different cell ids or
    have incompatible shapes."""
