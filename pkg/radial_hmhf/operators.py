"""
Discrete operators of the semi-implicit scheme.

C is the finite-difference discretisation of L u = -u_xx - u_x / x on the
interior nodes, assembled directly from its closed-form band entries.
D = diag(x_i), G(u) = diag(g(u_i)) with g(y) = sin(2y)/(2y), and
F(u) = (sin u_i) enters the discrete energy.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import GridError, ParameterError
from .grid import Grid, StateVector, norm_inf_weighted

logger = logging.getLogger(__name__)

G_TAYLOR_CUTOFF = 1e-4
G_LOWER_BOUND = -0.2173
C_ALPHA_MAX_ITER = 200
C_ALPHA_RESIDUAL = 1e-12

ArrayLike = Union[float, np.ndarray]


def g(y: ArrayLike) -> ArrayLike:
    """sin(2y)/(2y) with g(0) = 1; works on scalars and arrays."""
    arr = np.asarray(y, dtype=np.float64)
    two_y = 2.0 * arr
    small = np.abs(arr) < G_TAYLOR_CUTOFF
    sq = two_y * two_y
    taylor = 1.0 - sq / 6.0 + sq * sq / 120.0
    with np.errstate(divide="ignore", invalid="ignore"):
        quotient = np.sin(two_y) / np.where(small, 1.0, two_y)
    out = np.where(small, taylor, quotient)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True, eq=False)
class TridiagonalOperator:
    """Three-band N x N matrix.

    sub[k] is entry (k+1, k), sup[k] is entry (k, k+1), both of length N-1.
    """

    sub: np.ndarray = field(repr=False)
    main: np.ndarray = field(repr=False)
    sup: np.ndarray = field(repr=False)
    grid: Grid

    def __post_init__(self):
        n = self.grid.n_interior
        if self.main.shape != (n,) or self.sub.shape != (n - 1,) or self.sup.shape != (n - 1,):
            raise GridError(
                f"Band shapes {self.sub.shape}/{self.main.shape}/{self.sup.shape} do not fit grid {self.grid.tag}"
            )
        for band in (self.sub, self.main, self.sup):
            band.setflags(write=False)

    @property
    def dimension(self) -> int:
        return self.main.shape[0]

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = self.main * v
        out[:-1] += self.sup * v[1:]
        out[1:] += self.sub * v[:-1]
        return out

    def apply(self, state: StateVector) -> StateVector:
        if not self.grid.same_as(state.grid):
            raise GridError(f"Operator on {self.grid.tag} applied to state on {state.grid.tag}")
        return StateVector(self.matvec(state.values), self.grid)

    def row_sums(self) -> np.ndarray:
        return self.matvec(np.ones(self.dimension))

    def off_diagonal_abs_sums(self) -> np.ndarray:
        sums = np.zeros(self.dimension)
        sums[:-1] += np.abs(self.sup)
        sums[1:] += np.abs(self.sub)
        return sums

    def is_z_matrix(self) -> bool:
        return bool(np.all(self.sub <= 0.0) and np.all(self.sup <= 0.0))

    def is_weakly_diagonally_dominant(self, rel_tol: float = 1e-12) -> bool:
        scale = float(np.max(np.abs(self.main))) if self.dimension else 0.0
        slack = np.abs(self.main) - self.off_diagonal_abs_sums()
        return bool(np.all(slack >= -rel_tol * scale))

    def to_dense(self) -> np.ndarray:
        dense = np.diag(self.main)
        if self.dimension > 1:
            dense += np.diag(self.sup, 1) + np.diag(self.sub, -1)
        return dense


@dataclass(frozen=True, eq=False)
class DiagonalOperator:
    entries: np.ndarray = field(repr=False)
    grid: Grid

    def __post_init__(self):
        if self.entries.shape != (self.grid.n_interior,):
            raise GridError(f"Diagonal of length {self.entries.shape} does not fit grid {self.grid.tag}")
        self.entries.setflags(write=False)

    def apply(self, state: StateVector) -> StateVector:
        if not self.grid.same_as(state.grid):
            raise GridError(f"Operator on {self.grid.tag} applied to state on {state.grid.tag}")
        return StateVector(self.entries * state.values, self.grid)

    def to_dense(self) -> np.ndarray:
        return np.diag(self.entries)


@dataclass(frozen=True)
class StabilityParams:
    alpha: float
    c_alpha: float
    d_alpha: float


def assemble_C(grid: Grid) -> TridiagonalOperator:
    """C = A - D^{-1} B from its band entries.

    main = 2/h^2, super at row i = -(1 + 1/(2i))/h^2, sub at row i = -(1 - 1/(2i))/h^2.
    """
    n = grid.n_interior
    inv_h2 = 1.0 / (grid.spacing * grid.spacing)
    main = np.full(n, 2.0 * inv_h2)
    rows_up = np.arange(1, n, dtype=np.float64)
    rows_down = np.arange(2, n + 1, dtype=np.float64)
    sup = -inv_h2 * (1.0 + 1.0 / (2.0 * rows_up))
    sub = -inv_h2 * (1.0 - 1.0 / (2.0 * rows_down))
    return TridiagonalOperator(sub=sub, main=main, sup=sup, grid=grid)


def assemble_D(grid: Grid) -> DiagonalOperator:
    return DiagonalOperator(entries=np.array(grid.nodes, copy=True), grid=grid)


def assemble_G(u: StateVector) -> DiagonalOperator:
    return DiagonalOperator(entries=np.asarray(g(u.values), dtype=np.float64).reshape(-1), grid=u.grid)


def assemble_F(u: StateVector) -> StateVector:
    return StateVector(np.sin(u.values), u.grid)


def system_matrix(
    C: TridiagonalOperator,
    G: DiagonalOperator,
    grid: Grid,
    dt: float,
    identity_scale: float = 1.0,
) -> TridiagonalOperator:
    """identity_scale * I + dt * (C + G D^{-2}).

    identity_scale = 1 gives the semi-implicit Euler matrix, 3/2 the BDF2 one.
    """
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if not (C.grid.same_as(grid) and G.grid.same_as(grid)):
        raise GridError(f"Operators on {C.grid.tag}/{G.grid.tag} do not match grid {grid.tag}")
    main = identity_scale + dt * (C.main + G.entries / (grid.nodes * grid.nodes))
    return TridiagonalOperator(sub=dt * C.sub, main=main, sup=dt * C.sup, grid=grid)


def similarity_transform(C: TridiagonalOperator, alpha: float) -> TridiagonalOperator:
    """D^{-alpha} C D^{alpha} in banded form."""
    x = C.grid.nodes
    ratio_down = (x[:-1] / x[1:]) ** alpha
    ratio_up = (x[1:] / x[:-1]) ** alpha
    return TridiagonalOperator(
        sub=C.sub * ratio_down,
        main=np.array(C.main, copy=True),
        sup=C.sup * ratio_up,
        grid=C.grid,
    )


def add_diagonal(T: TridiagonalOperator, diagonal: np.ndarray, scale: float = 1.0, shift: float = 0.0) -> TridiagonalOperator:
    """shift * I + scale * (T + diag(diagonal))."""
    return TridiagonalOperator(
        sub=scale * T.sub,
        main=shift + scale * (T.main + diagonal),
        sup=scale * T.sup,
        grid=T.grid,
    )


def c_alpha(alpha: float) -> float:
    """Unique c in (0, pi/2] with g(c) = alpha^2, by bisection."""
    if not 0.0 <= alpha < 1.0:
        raise ParameterError(f"c_alpha is defined for alpha in [0, 1), got {alpha}")
    target = alpha * alpha
    if target == 0.0:
        return math.pi / 2.0
    lo, hi = 0.0, math.pi / 2.0
    for _ in range(C_ALPHA_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if g(mid) > target:
            lo = mid
        else:
            hi = mid
    c = 0.5 * (lo + hi)
    residual = abs(g(c) - target)
    if residual > C_ALPHA_RESIDUAL:
        raise ParameterError(f"c_alpha bisection residual {residual:.3e} for alpha={alpha}")
    return c


def stability_params(alpha: float, u0: StateVector) -> StabilityParams:
    return StabilityParams(alpha=alpha, c_alpha=c_alpha(alpha), d_alpha=norm_inf_weighted(u0, alpha))

