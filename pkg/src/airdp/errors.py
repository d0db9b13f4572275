"""Exception hierarchy shared across the package."""


class AirdpError(Exception):
    """Base class for all errors raised by airdp."""


class DomainError(AirdpError, ValueError):
    """An argument lies outside the domain of a function."""


class BracketError(AirdpError, ValueError):
    """The objective does not change sign on the supplied interval."""


class ConvergenceError(AirdpError, RuntimeError):
    pass


class NotPositiveDefiniteError(AirdpError, ValueError):
    pass


class PreconditionError(AirdpError, ValueError):
    pass


class DimensionError(AirdpError, ValueError):
    pass


class FormatError(AirdpError, ValueError):
    """A data file does not follow the expected on-disk format."""


class PowerViolationError(AirdpError):
    """A device attempted to transmit above its power budget.

    This always indicates a bug in a power-allocation routine, never a
    recoverable condition.
    """


class BudgetExceededError(AirdpError):
    """A privacy charge overdrew the ledger beyond float slack."""


class ConfigError(AirdpError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
