"""Exception hierarchy shared by every module of the package."""


class DTUEError(Exception):
    """Base class for all package errors."""


class ValidationError(DTUEError, ValueError):
    """An input violates a documented invariant."""


class ParseError(ValidationError):
    """A file could not be parsed; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigurationError(ValidationError):
    """Grid or solver settings are inconsistent (e.g. the CFL-style condition)."""


class HorizonOverflowError(DTUEError):
    """Some trips do not arrive before the end of the time horizon.

    ``unfinished_mass`` is the demand fraction still travelling at the horizon.
    """

    def __init__(self, message, unfinished_mass=float("nan")):
        super().__init__(message)
        self.unfinished_mass = unfinished_mass
