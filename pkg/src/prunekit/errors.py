"""Exception hierarchy. Each family maps to one CLI exit code."""


class PrunekitError(Exception):
    exit_code = 1


class ConfigError(PrunekitError, ValueError):
    """Invalid configuration, flags or arguments."""

    exit_code = 1


class DataError(PrunekitError, ValueError):
    """Malformed, truncated or invalid input data."""

    exit_code = 2


class SolverError(PrunekitError, RuntimeError):
    """A numerical routine failed to converge or diverged."""

    exit_code = 3


class ConvergenceError(SolverError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual
