"""Exception hierarchy shared across the package."""


class InfoPGError(Exception):
    """Base class for all package errors."""


class DimensionError(InfoPGError, ValueError):
    """Operand shapes do not agree."""


class DomainError(InfoPGError, ValueError):
    """A value lies outside the domain of an operation (e.g. log of 0)."""


class NumericError(InfoPGError, ArithmeticError):
    """Non-finite values entered or were produced by a computation."""


class ContractError(InfoPGError, ValueError):
    """A documented precondition was violated by the caller."""


class StaleGraphError(ContractError):
    """A tensor from a released computation graph was reused."""


class ConfigError(InfoPGError, ValueError):
    """A run configuration could not be parsed or validated."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
