"""Exception types shared across the package."""


class ContractError(ValueError):
    """Raised when an input violates an operation's precondition."""


class NumericalFailure(ArithmeticError):
    """A non-finite value appeared during a numerical evaluation."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class RefusalError(RuntimeError):
    """The operation declines to run, e.g. a dense build above the size cap."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class CgWarning(RuntimeWarning):
    """Conjugate gradient stopped before reaching the residual tolerance."""
