"""
Uniform interior grid on (0, 1), nodal state vectors, time grid and the
discrete norms used throughout the solver.

Boundary values u(0) = u(1) = 0 are implicit; only the N interior nodes
x_i = i*h, h = 1/(N+1), are stored.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import GridError, ParameterError

logger = logging.getLogger(__name__)

Scalar = Union[int, float]


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform interior mesh with precomputed nodes."""

    n_interior: int
    spacing: float
    nodes: np.ndarray = field(repr=False)

    @property
    def tag(self) -> str:
        return f"uniform-N{self.n_interior}"

    def same_as(self, other: "Grid") -> bool:
        return self is other or self.n_interior == other.n_interior

    def __len__(self) -> int:
        return self.n_interior


def make_grid(n_interior: int) -> Grid:
    """Build the grid with h = 1/(N+1) and nodes x_i = i*h."""
    if isinstance(n_interior, bool) or int(n_interior) != n_interior or n_interior < 1:
        raise GridError(f"Grid needs at least one interior node, got N={n_interior}")
    n = int(n_interior)
    h = 1.0 / (n + 1)
    nodes = np.arange(1, n + 1, dtype=np.float64) * h
    nodes.setflags(write=False)
    return Grid(n_interior=n, spacing=h, nodes=nodes)


class StateVector:
    """Values of a discrete solution at the interior nodes of one grid.

    Instances are immutable. Arithmetic is only defined between vectors on
    the same grid; anything else raises GridError.
    """

    __slots__ = ("_values", "_grid", "_diverged")

    def __init__(self, values, grid: Grid, diverged: bool = False):
        arr = np.array(values, dtype=np.float64, copy=True).reshape(-1)
        if arr.shape[0] != grid.n_interior:
            raise GridError(
                f"State has {arr.shape[0]} entries but grid {grid.tag} has {grid.n_interior} nodes"
            )
        if not diverged and not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr))[0])
            raise GridError(f"Non-finite state entry {arr[bad]} at node {bad + 1} (x={grid.nodes[bad]:.6g})")
        arr.setflags(write=False)
        self._values = arr
        self._grid = grid
        self._diverged = bool(diverged)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def grid(self) -> Grid:
        return self._grid

    @property
    def diverged(self) -> bool:
        return self._diverged

    @property
    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self._values)))

    def __len__(self) -> int:
        return self._values.shape[0]

    def __repr__(self) -> str:
        flag = ", diverged" if self._diverged else ""
        return f"StateVector(N={len(self)}{flag})"

    def _check_same_grid(self, other: "StateVector") -> None:
        if not isinstance(other, StateVector):
            raise TypeError(f"Expected StateVector, got {type(other).__name__}")
        if not self._grid.same_as(other._grid):
            raise GridError(f"Cross-grid arithmetic between {self._grid.tag} and {other._grid.tag}")

    def _wrap(self, values: np.ndarray) -> "StateVector":
        finite = bool(np.all(np.isfinite(values)))
        return StateVector(values, self._grid, diverged=not finite)

    def __add__(self, other: "StateVector") -> "StateVector":
        self._check_same_grid(other)
        return self._wrap(self._values + other._values)

    def __sub__(self, other: "StateVector") -> "StateVector":
        self._check_same_grid(other)
        return self._wrap(self._values - other._values)

    def __mul__(self, scalar: Scalar) -> "StateVector":
        if isinstance(scalar, StateVector):
            raise TypeError("Elementwise products of states are not defined")
        return self._wrap(self._values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "StateVector":
        return self._wrap(-self._values)


def zero_state(grid: Grid) -> StateVector:
    return StateVector(np.zeros(grid.n_interior), grid)


def sample_initial(f: Callable[[float], float], grid: Grid) -> StateVector:
    """Evaluate f at every interior node."""
    values = np.empty(grid.n_interior, dtype=np.float64)
    for i, x in enumerate(grid.nodes):
        value = float(f(float(x)))
        if not math.isfinite(value):
            raise GridError(f"Initial condition is not finite at node {i + 1} (x={x:.6g}): {value}")
        values[i] = value
    return StateVector(values, grid)


@dataclass(frozen=True)
class TimeGrid:
    final_time: float
    step_count: int
    step: float

    def time_at(self, n: int) -> float:
        return n * self.step


def make_time_grid(final_time: float, step_count: int) -> TimeGrid:
    if not final_time > 0 or not math.isfinite(final_time):
        raise ParameterError(f"Final time must be positive, got T={final_time}")
    if isinstance(step_count, bool) or int(step_count) != step_count or step_count < 1:
        raise ParameterError(f"Step count must be a positive integer, got M={step_count}")
    m = int(step_count)
    return TimeGrid(final_time=float(final_time), step_count=m, step=float(final_time) / m)


def time_grid_from_step(final_time: float, dt: float, rel_tol: float = 1e-9) -> TimeGrid:
    """TimeGrid with M = T/dt; dt must divide T up to rel_tol."""
    if not dt > 0 or not math.isfinite(dt):
        raise ParameterError(f"Time step must be positive, got dt={dt}")
    if not final_time > 0:
        raise ParameterError(f"Final time must be positive, got T={final_time}")
    m = int(round(final_time / dt))
    if m < 1 or abs(m * dt - final_time) > rel_tol * final_time:
        raise ParameterError(f"dt={dt:g} does not divide T={final_time:g}")
    return make_time_grid(final_time, m)


# ===== NORMS =====

def norm_inf(v: StateVector) -> float:
    return float(np.max(np.abs(v.values))) if len(v) else 0.0


def norm_2h(v: StateVector) -> float:
    h = v.grid.spacing
    return math.sqrt(h * float(np.dot(v.values, v.values)))


def norm_Dh(v: StateVector) -> float:
    """sqrt(h * sum x_i v_i^2)."""
    h = v.grid.spacing
    vals = v.values
    return math.sqrt(h * float(np.dot(v.grid.nodes * vals, vals)))


def weight_powers(grid: Grid, alpha: float) -> np.ndarray:
    """x_i^(-alpha) computed as exp(-alpha * ln x_i)."""
    return np.exp(-alpha * np.log(grid.nodes))


def norm_inf_weighted(v: StateVector, alpha: float) -> float:
    """max_i x_i^(-alpha) |v_i| for alpha in [0, 1]."""
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return norm_inf(v)
    return float(np.max(weight_powers(v.grid, alpha) * np.abs(v.values)))
