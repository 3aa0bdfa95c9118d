"""
Exceptions raised by the degenbeam services.
The CLI layer maps them to exit statuses.
"""

from typing import Optional


class DegenBeamError(Exception):
    """Base class for all degenbeam errors."""


class InvalidCoefficientError(DegenBeamError, ValueError):
    """The coefficient a is not admissible (a(0) != 0 or a <= 0 inside (0,1])."""


class OutOfScopeError(DegenBeamError):
    """A parameter combination that is an open problem for degenerate beams."""

    def __init__(self, message: str, citation: Optional[str] = None):
        self.citation = citation
        if citation:
            message = f"{message} ({citation})"
        super().__init__(message)


class DivergentIntegralError(DegenBeamError, ValueError):
    """The integral of 1/a diverges (strongly degenerate coefficient)."""


class WrongRegimeError(DegenBeamError, ValueError):
    """An operation received data computed under another boundary regime."""


class PreconditionError(DegenBeamError, ValueError):
    """Inputs violate a precondition of the requested check or computation."""


class InfeasibleConstantsError(DegenBeamError):
    """No admissible delta exists for the stabilization constant chain."""


class ConfigError(DegenBeamError, ValueError):
    """The run configuration could not be read or validated."""


OPEN_PROBLEM_K = "K >= 2 is excluded for technical reasons and remains open"
OPEN_PROBLEM_SD_FEEDBACK = (
    "the case gamma = 0 and/or beta = 0 in the strongly degenerate case is still an open problem"
)
