"""Exception hierarchy for the solver."""


class Stokes2pError(Exception):
    """Base class for all package errors."""


class ConfigError(Stokes2pError):
    """Invalid run configuration or parameters."""


class ContractError(Stokes2pError):
    """An operation was called with arguments violating its contract."""


class GeometryError(Stokes2pError):
    """Degenerate or inconsistent geometry (self-intersection, point outside
    the domain, degenerate segment, ...)."""


class AssumptionViolation(GeometryError):
    """The vertex-normal nondegeneracy assumption failed on the current
    interface; the time step cannot proceed."""


class SolverError(Stokes2pError):
    """The coupled linear system could not be solved to tolerance."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = dict(residuals or {})


class ResourceLimitError(Stokes2pError):
    """A configured resource budget (e.g. element count) was exceeded."""
