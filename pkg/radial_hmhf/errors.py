"""
Exception hierarchy for the radial HMHF solver.

Numerical modules raise these; the command layer turns them into result
dicts with stable exit codes.
"""

from typing import Optional


class HMHFError(Exception):
    """Base class for all solver errors."""


class GridError(HMHFError, ValueError):
    """Invalid grid, cross-grid arithmetic or a bad nodal sample."""


class ParameterError(HMHFError, ValueError):
    """A numerical parameter is outside its admissible range."""


class SingularPivotError(HMHFError):
    """Forward elimination met a pivot below the guard threshold."""

    def __init__(self, row: int, pivot: float, threshold: float):
        self.row = row
        self.pivot = pivot
        self.threshold = threshold
        super().__init__(
            f"Singular pivot {pivot:.3e} at row {row} (guard {threshold:.3e}); "
            "system matrix has lost its M-matrix structure"
        )


class SingularMatrixError(HMHFError):
    """Dense oracle could not invert a matrix."""


class DivergenceError(HMHFError):
    """A trajectory left the representable range."""


class ReferenceValidationError(HMHFError):
    """Euler and BDF2 reference runs disagree beyond the gate."""

    def __init__(self, discrepancy: float, tolerance: float, message: Optional[str] = None):
        self.discrepancy = discrepancy
        self.tolerance = tolerance
        super().__init__(
            message
            or f"Reference rejected: Euler/BDF2 discrepancy {discrepancy:.3e} exceeds {tolerance:.3e}"
        )


class CacheError(HMHFError):
    """Unreadable or corrupt reference cache file."""


class OutputExistsError(HMHFError, FileExistsError):
    """Refusing to overwrite an existing output without force."""


class OutputWriteError(HMHFError, OSError):
    """Writing an output file failed."""


class UsageError(HMHFError):
    """Bad command line or config file."""
