"""Exception hierarchy shared by the library and the command line.

every error carries the process exit code the CLI reports for it.
"""

EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_SIZE_GUARD = 4


class GridMRFError(Exception):
    """Base class for all gridmrf errors."""

    exit_code = 1


class InputError(GridMRFError, ValueError):
    """Invalid arguments, masks, parameters or files."""

    exit_code = EXIT_USAGE


class NoObservationsError(InputError):
    """A mask or field holds no observed cell."""


class InapplicableError(InputError):
    """An approximation scheme's preconditions do not hold."""


class NumericalError(GridMRFError, ArithmeticError):
    """A factorization or spectral evaluation failed."""

    exit_code = EXIT_NUMERICAL


class SingularSpectrumError(NumericalError):
    """The spectral density is infinite or nonfinite at a sampled frequency."""


class NotPositiveDefiniteError(NumericalError):
    """A matrix expected to be positive definite failed to factor.

    Attributes:
        condition: estimated 2-norm condition number when available
    """

    def __init__(self, message: str, condition: float | None = None) -> None:
        """Initialize with an optional condition-number diagnostic.

        Args:
            message: human readable description
            condition: estimated condition number of the failing matrix
        """
        if condition is not None:
            message = f"{message} (condition number ~ {condition:.3g})"
        super().__init__(message)
        self.condition = condition


class SizeGuardError(GridMRFError, MemoryError):
    """A problem exceeds a configured dense-size guard."""

    exit_code = EXIT_SIZE_GUARD
