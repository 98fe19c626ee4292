"""Shared exception types. CLI maps these onto exit codes (2, 3)."""


class PreconditionError(ValueError):
    """An operation was called with inputs outside its contract."""


class ResourceCapError(RuntimeError):
    """A configured resource cap (site count, window size) would be exceeded."""


class QuadratureError(RuntimeError):
    """Spectral quadrature failed to converge; carries the last residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class FactorizationError(RuntimeError):
    """A covariance matrix could not be factorized after jitter attempts."""
