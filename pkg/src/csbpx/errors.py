"""Exception hierarchy shared by all modules.

The CLI maps these onto its exit codes, so every failure raised by the
library falls into exactly one of the three families below.
"""


class CsbpError(Exception):
    """Base class for library errors."""


class DomainError(CsbpError, ValueError):
    """An argument lies outside the domain of the operation."""


class ModelError(CsbpError, ValueError):
    """The Levy model or rate function is invalid for the request."""


class PreconditionError(CsbpError):
    """A mathematical precondition (H0, H1, p > 0, ...) fails.

    ``condition`` names the failed test so callers can report it.
    """

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class UnsupportedModelError(PreconditionError):
    """The operation needs p, gamma in (0, inf) or similar and the model lacks it."""


class NumericError(CsbpError, ArithmeticError):
    """A numerical procedure failed to converge or produced inconsistent output."""

    def __init__(self, message, detail=None):
        super().__init__(message)
        self.detail = detail
