"""
Direct solvers for the per-step tridiagonal systems.

thomas_solve is the production path (no pivoting, pivot guard); the dense
routines are oracles for the verification suite and tests only.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numba import njit

from .errors import GridError, SingularMatrixError, SingularPivotError
from .grid import StateVector
from .operators import TridiagonalOperator

logger = logging.getLogger(__name__)

PIVOT_GUARD = 1e-14
DENSE_MAX_DIMENSION = 64
DENSE_INVERSE_RESIDUAL = 1e-8


@njit(cache=True)
def _thomas_kernel(sub, main, sup, rhs, pivot_floor):
    """Forward elimination and back substitution.

    Returns (x, bad_row, bad_pivot); bad_row is -1 when every pivot cleared
    pivot_floor.
    """
    n = main.shape[0]
    c_prime = np.empty(n)
    d_prime = np.empty(n)
    x = np.empty(n)

    pivot = main[0]
    if abs(pivot) < pivot_floor:
        return x, 0, pivot
    c_prime[0] = sup[0] / pivot if n > 1 else 0.0
    d_prime[0] = rhs[0] / pivot

    for k in range(1, n):
        pivot = main[k] - sub[k - 1] * c_prime[k - 1]
        if abs(pivot) < pivot_floor:
            return x, k, pivot
        c_prime[k] = sup[k] / pivot if k < n - 1 else 0.0
        d_prime[k] = (rhs[k] - sub[k - 1] * d_prime[k - 1]) / pivot

    x[n - 1] = d_prime[n - 1]
    for k in range(n - 2, -1, -1):
        x[k] = d_prime[k] - c_prime[k] * x[k + 1]
    return x, -1, 0.0


def thomas_solve_values(T: TridiagonalOperator, rhs: np.ndarray) -> np.ndarray:
    """Solve T x = rhs on raw arrays; raises SingularPivotError on a tiny pivot."""
    scale = float(np.max(np.abs(T.main)))
    floor = PIVOT_GUARD * scale
    x, bad_row, bad_pivot = _thomas_kernel(T.sub, T.main, T.sup, np.ascontiguousarray(rhs, dtype=np.float64), floor)
    if bad_row >= 0:
        raise SingularPivotError(row=int(bad_row) + 1, pivot=float(bad_pivot), threshold=floor)
    return x


def thomas_solve(T: TridiagonalOperator, rhs: StateVector) -> StateVector:
    if not T.grid.same_as(rhs.grid):
        raise GridError(f"System on {T.grid.tag} with right-hand side on {rhs.grid.tag}")
    x = thomas_solve_values(T, rhs.values)
    return StateVector(x, T.grid, diverged=not bool(np.all(np.isfinite(x))))


@dataclass(frozen=True, eq=False)
class DenseMatrix:
    values: np.ndarray

    def __post_init__(self):
        rows, cols = self.values.shape
        if rows != cols:
            raise SingularMatrixError(f"Dense matrix must be square, got {self.values.shape}")
        if rows > DENSE_MAX_DIMENSION:
            raise SingularMatrixError(f"Dense oracle is capped at N={DENSE_MAX_DIMENSION}, got {rows}")

    @property
    def dimension(self) -> int:
        return self.values.shape[0]

    def inf_norm(self) -> float:
        return float(np.max(np.sum(np.abs(self.values), axis=1)))

    def spectral_norm(self) -> float:
        return float(np.linalg.norm(self.values, 2))


def _lu(dense: np.ndarray):
    lu, piv = scipy.linalg.lu_factor(dense, check_finite=True)
    diag = np.abs(np.diag(lu))
    scale = float(np.max(np.abs(dense))) if dense.size else 0.0
    if scale == 0.0 or float(np.min(diag)) <= PIVOT_GUARD * scale:
        raise SingularMatrixError(f"Matrix is numerically singular (smallest pivot {float(np.min(diag)):.3e})")
    return lu, piv


def dense_invert(T: TridiagonalOperator) -> DenseMatrix:
    """Explicit inverse through partially pivoted LU."""
    n = T.dimension
    if n > DENSE_MAX_DIMENSION:
        raise SingularMatrixError(f"Dense oracle is capped at N={DENSE_MAX_DIMENSION}, got {n}")
    dense = T.to_dense()
    lu, piv = _lu(dense)
    inverse = scipy.linalg.lu_solve((lu, piv), np.eye(n))
    residual = float(np.max(np.sum(np.abs(dense @ inverse - np.eye(n)), axis=1)))
    if residual > DENSE_INVERSE_RESIDUAL:
        raise SingularMatrixError(f"Inverse residual {residual:.3e} exceeds {DENSE_INVERSE_RESIDUAL:.0e}")
    return DenseMatrix(values=inverse)


def dense_solve(T: TridiagonalOperator, rhs: np.ndarray) -> np.ndarray:
    """Gaussian elimination oracle for T x = rhs."""
    if T.dimension > DENSE_MAX_DIMENSION:
        raise SingularMatrixError(f"Dense oracle is capped at N={DENSE_MAX_DIMENSION}, got {T.dimension}")
    lu, piv = _lu(T.to_dense())
    return scipy.linalg.lu_solve((lu, piv), np.asarray(rhs, dtype=np.float64))
