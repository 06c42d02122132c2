"""Exception hierarchy shared by all uotkit modules."""


class UOTError(Exception):
    """Base class for uotkit errors."""


class ValidationError(UOTError, ValueError):
    """Raised when inputs violate a documented precondition."""


class DivergenceError(UOTError, ArithmeticError):
    """Raised when an iterative solver produces non-finite iterates.

    The partial ``report`` (if any) is attached so callers can inspect how
    far the solve got.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ResidualError(UOTError, ValueError):
    """Raised when an optimality check is undefined at the given point."""
