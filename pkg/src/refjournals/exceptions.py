"""Exception types raised across the package."""


class RefJournalsError(Exception):
    """Base class for package errors."""


class UnsupportedInputError(RefJournalsError, ValueError):
    """Input is valid in general but not for the requested algorithm."""


class DegenerateInputError(RefJournalsError, ValueError):
    """Input on a boundary where the quantity is undefined."""


class SupportTooLargeError(RefJournalsError):
    """Exact enumeration would exceed the configured support limit."""


class InsufficientDrawsError(RefJournalsError, ValueError):
    """Not enough chains or iterations for a convergence diagnostic."""


class InitializationError(RefJournalsError, RuntimeError):
    """No finite-density starting point was found."""


class DataError(RefJournalsError, ValueError):
    """Inconsistent or malformed input data."""


class NumericalError(RefJournalsError, ArithmeticError):
    """A numerical routine failed irrecoverably."""


class UnusableTitleError(RefJournalsError, ValueError):
    """A title normalizes to the empty string."""


class ConvergenceWarning(UserWarning):
    """An iterative fit stopped before meeting its tolerance."""
