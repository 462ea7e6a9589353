"""
Time integration of the semi-implicit scheme

    (I + dt (C + G(u^n) D^{-2})) u^{n+1} = u^n

and of its BDF2 counterpart used to validate reference solutions.
"""

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import ParameterError, SingularPivotError
from .grid import Grid, StateVector, TimeGrid
from .linsolve import thomas_solve_values
from .operators import DiagonalOperator, TridiagonalOperator, assemble_C, g, system_matrix

logger = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1e12

Monitor = Callable[[int, float, StateVector], None]


class Scheme(str, enum.Enum):
    EULER_SI = "euler"
    BDF2 = "bdf2"


@dataclass(frozen=True)
class SchemeConfig:
    scheme: Scheme
    time: TimeGrid
    monitor_stride: int = 1

    def __post_init__(self):
        if self.monitor_stride < 1:
            raise ParameterError(f"Monitor stride must be positive, got {self.monitor_stride}")
        if self.monitor_stride > self.time.step_count:
            raise ParameterError(
                f"Monitor stride {self.monitor_stride} exceeds step count {self.time.step_count}"
            )


@dataclass
class Trajectory:
    times: List[float] = field(default_factory=list)
    states: List[StateVector] = field(default_factory=list)
    diverged: bool = False
    divergence_reason: Optional[str] = None
    steps_taken: int = 0
    final_state: Optional[StateVector] = None

    def record(self, t: float, state: StateVector) -> None:
        if self.times and t <= self.times[-1]:
            return
        self.times.append(t)
        self.states.append(state)


def _coefficients(u_lin: np.ndarray, grid: Grid, frozen_G: Optional[DiagonalOperator]) -> DiagonalOperator:
    if frozen_G is not None:
        return frozen_G
    return DiagonalOperator(entries=np.asarray(g(u_lin), dtype=np.float64).reshape(-1), grid=grid)


def _finish(values: np.ndarray, grid: Grid) -> StateVector:
    return StateVector(values, grid, diverged=not bool(np.all(np.isfinite(values))))


def euler_step(
    u_n: StateVector,
    dt: float,
    grid: Grid,
    C: TridiagonalOperator,
    frozen_G: Optional[DiagonalOperator] = None,
) -> StateVector:
    """One semi-implicit Euler step; G is taken from u_n unless frozen_G is given."""
    G = _coefficients(u_n.values, grid, frozen_G)
    T = system_matrix(C, G, grid, dt)
    return _finish(thomas_solve_values(T, u_n.values), grid)


def bdf2_step(
    u_n: StateVector,
    u_nm1: StateVector,
    dt: float,
    grid: Grid,
    C: TridiagonalOperator,
    frozen_G: Optional[DiagonalOperator] = None,
) -> StateVector:
    """One BDF2 step linearised at the extrapolant 2 u^n - u^{n-1}."""
    u_star = 2.0 * u_n.values - u_nm1.values
    G = _coefficients(u_star, grid, frozen_G)
    T = system_matrix(C, G, grid, dt, identity_scale=1.5)
    rhs = 2.0 * u_n.values - 0.5 * u_nm1.values
    return _finish(thomas_solve_values(T, rhs), grid)


def _divergence_reason(state: StateVector) -> Optional[str]:
    if not state.is_finite:
        return "non-finite entries"
    peak = float(np.max(np.abs(state.values)))
    if peak > DIVERGENCE_THRESHOLD:
        return f"max norm {peak:.3e} above {DIVERGENCE_THRESHOLD:.0e}"
    return None


def evolve(
    u0: StateVector,
    config: SchemeConfig,
    grid: Grid,
    monitors: Sequence[Monitor] = (),
    C: Optional[TridiagonalOperator] = None,
) -> Trajectory:
    """Run M steps, recording every monitor_stride steps and at n = M."""
    if not u0.grid.same_as(grid):
        raise ParameterError(f"Initial state lives on {u0.grid.tag}, not {grid.tag}")
    if C is None:
        C = assemble_C(grid)
    dt = config.time.step
    m = config.time.step_count
    stride = config.monitor_stride

    logger.info(
        f"Evolving {config.scheme.value} on {grid.tag}: dt={dt:g}, M={m}, stride={stride}"
    )
    trajectory = Trajectory()
    trajectory.record(0.0, u0)
    for monitor in monitors:
        monitor(0, 0.0, u0)

    previous: Optional[StateVector] = None
    current = u0
    for n in range(m):
        try:
            if config.scheme is Scheme.BDF2 and previous is not None:
                nxt = bdf2_step(current, previous, dt, grid, C)
            else:
                nxt = euler_step(current, dt, grid, C)
        except SingularPivotError as e:
            trajectory.diverged = True
            trajectory.divergence_reason = str(e)
            logger.warning(f"Step {n + 1} failed: {e}")
            break

        step = n + 1
        t = config.time.time_at(step)
        reason = _divergence_reason(nxt)
        trajectory.steps_taken = step
        if reason is not None:
            trajectory.diverged = True
            trajectory.divergence_reason = f"step {step} (t={t:g}): {reason}"
            trajectory.record(t, nxt)
            logger.warning(f"Divergence guard fired at {trajectory.divergence_reason}")
            current = nxt
            break

        previous, current = current, nxt
        if step % stride == 0 or step == m:
            trajectory.record(t, current)
            for monitor in monitors:
                monitor(step, t, current)

    trajectory.final_state = current
    logger.info(
        f"Evolution finished after {trajectory.steps_taken} steps"
        + (f" (diverged: {trajectory.divergence_reason})" if trajectory.diverged else "")
    )
    return trajectory


def max_norm_monitor(sink: List[float]) -> Monitor:
    """Monitor appending ||u^n||_inf to sink."""

    def _monitor(n: int, t: float, state: StateVector) -> None:
        sink.append(float(np.max(np.abs(state.values))) if len(state) else 0.0)

    return _monitor


def is_nonincreasing(values: Sequence[float], ulps: int = 2) -> bool:
    """True if every value is at most its predecessor plus `ulps` units in the last place."""
    for prev, cur in zip(values, values[1:]):
        if cur > prev + ulps * math.ulp(prev):
            return False
    return True
