"""Exception types shared across the package."""


class DynlapError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DynlapError):
    """Invalid parameters, domain bounds, or experiment configuration."""


class GeometryError(DynlapError):
    """Degenerate or inconsistent mesh geometry."""


class OutOfDomainError(DynlapError):
    """A point left the computational domain in a non-periodic direction."""

    def __init__(self, message, points=None):
        super().__init__(message)
        self.points = points


class IntegrationError(DynlapError):
    """Time integration failed or exhausted its step budget."""

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class NumericalError(DynlapError):
    """A linear-algebra stage (factorization, eigensolve) failed."""


class ContractViolation(DynlapError):
    """An input violated a documented precondition (e.g. non-normalized vector)."""
