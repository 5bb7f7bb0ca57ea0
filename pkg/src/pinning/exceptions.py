"""
Exception hierarchy for Pinning Lab.

Every error carries the process exit code the CLI reports for it.
"""
from typing import Optional


class PinningError(Exception):
    """Base class for all lab errors."""

    exit_code: int = 2


class DomainError(PinningError, ValueError):
    """Input outside the domain of an operation."""


class PreconditionError(PinningError, ValueError):
    """A mathematical precondition of an operation does not hold."""


class CutoffTooSmallError(PreconditionError):
    """The construction's cutoff k is too small for its gamma; smaller amplitudes give larger k."""

    def __init__(self, message: str, k: Optional[int] = None):
        super().__init__(message)
        self.k = k


class DivergenceError(PinningError, ArithmeticError):
    """A series required by the operation is not summable."""


class ToleranceError(PinningError, ArithmeticError):
    """A certified bracket could not be made narrow enough."""

    def __init__(self, message: str, achieved_width: Optional[float] = None):
        super().__init__(message)
        self.achieved_width = achieved_width


class ResourceCapError(PinningError):
    """A size parameter exceeds the configured resource cap."""

    exit_code = 3

    def __init__(self, message: str, required: Optional[int] = None, cap: Optional[int] = None):
        super().__init__(message)
        self.required = required
        self.cap = cap


class InvariantViolation(PinningError, AssertionError):
    """An inequality that must hold was violated; indicates a bug."""

    exit_code = 4


class ConfigValidationError(PinningError):
    """A run configuration failed validation."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


__all__ = [
    "PinningError",
    "DomainError",
    "PreconditionError",
    "CutoffTooSmallError",
    "DivergenceError",
    "ToleranceError",
    "ResourceCapError",
    "InvariantViolation",
    "ConfigValidationError",
]
