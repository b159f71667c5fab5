"""Exception types shared across the package."""


class PsfUnmixError(Exception):
    """Base class for all package-specific errors."""


class DomainError(PsfUnmixError, ValueError):
    """A shape parameter falls outside the kernel family's domain."""


class InputError(PsfUnmixError, ValueError):
    """Malformed or non-finite user input."""


class DependencyError(PsfUnmixError, LookupError):
    """A required precomputed quantity (e.g. a coherence table entry) is missing."""

    def __init__(self, message, missing=None):
        super().__init__(message)
        self.missing = missing


class SeriesTruncationError(PsfUnmixError, ArithmeticError):
    """A coherence/interference series hit the term cap while still contributing.

    Carries the partial sum so callers can inspect how far summation got.
    """

    def __init__(self, message, partial_sum=None, last_term=None):
        super().__init__(message)
        self.partial_sum = partial_sum
        self.last_term = last_term


class ConditioningError(PsfUnmixError, ValueError):
    """A linear subproblem is numerically rank deficient."""


class DivergenceError(PsfUnmixError, RuntimeError):
    """The solver's loss blew up; carries the loss trace up to the failure."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class FeasibilityError(PsfUnmixError, ValueError):
    """An operation requires a feasible basin certificate but got an infeasible one."""


class OutOfBasinError(PsfUnmixError, ValueError):
    """A requested radius is at or beyond the certified admissible radius."""
