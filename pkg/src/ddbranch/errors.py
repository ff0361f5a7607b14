"""Exception types raised across the package."""


class DdbranchError(Exception):
    """Base class for all package errors."""


class DomainError(DdbranchError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConvergenceError(DdbranchError, ArithmeticError):
    """A functional iteration failed to meet its stopping rule.

    The last observed increment is kept on ``last_increment``.
    """

    def __init__(self, message, last_increment=float("nan")):
        super().__init__(message)
        self.last_increment = last_increment


class CertificationError(DdbranchError):
    """A tabulated function failed one of its self-consistency checks."""


class PopulationOverflow(DdbranchError, OverflowError):
    """A simulated population exceeded the configured cap."""


class ConfigError(DdbranchError, ValueError):
    """A run configuration could not be parsed or validated."""

    def __init__(self, message, key=None, line=None):
        where = ""
        if key is not None:
            where = f" [{key}"
            if line is not None:
                where += f", line {line}"
            where += "]"
        super().__init__(message + where)
        self.key = key
        self.line = line
