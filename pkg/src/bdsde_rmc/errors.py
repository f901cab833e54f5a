"""Exception types shared across the package."""


class BDSDEError(Exception):
    """Base class for all package errors."""


class ConfigurationError(BDSDEError, ValueError):
    """Invalid problem, scheme or run configuration (CLI exit code 2)."""


class NumericalError(BDSDEError, ArithmeticError):
    """A numerical procedure failed or produced non-finite values (CLI exit code 3)."""


class SimulationError(NumericalError):
    """Non-finite state encountered while simulating paths."""


class ValidationError(BDSDEError):
    """A coefficient audit could not be carried out (non-finite evaluation)."""
