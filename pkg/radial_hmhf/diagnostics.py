"""
Discrete Dirichlet energy, weighted-norm traces and blow-up indication.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ParameterError
from .grid import Grid, StateVector, norm_inf_weighted
from .operators import TridiagonalOperator
from .stepper import Trajectory

logger = logging.getLogger(__name__)

ENERGY_REL_TOL = 1e-12
BLOWUP_RATIO_THRESHOLD = 10.0
BLOWUP_JUMP_THRESHOLD = 0.5


@dataclass
class EnergyTrace:
    times: List[float]
    energies: List[float]
    violations: List[Tuple[int, float]] = field(default_factory=list)

    @property
    def dissipative(self) -> bool:
        return not self.violations


@dataclass
class BlowupReport:
    trace: List[float]
    times: List[float]
    growth_ratio: float
    steepest_rise_time: Optional[float]
    max_relative_jump: float
    triggered: bool
    rise_onset_time: Optional[float] = None
    rising_after_onset: bool = True


def discrete_energy(u: StateVector, grid: Grid, C: TridiagonalOperator) -> float:
    """E_h(u) = h <D C u, u> + h <D^{-1} F(u), F(u)>."""
    x = grid.nodes
    vals = u.values
    gradient_part = float(np.dot(x * C.matvec(vals), vals))
    sines = np.sin(vals)
    angular_part = float(np.sum(sines * sines / x))
    return grid.spacing * (gradient_part + angular_part)


def energy_trace(
    traj: Trajectory,
    grid: Grid,
    C: TridiagonalOperator,
    rel_tol: float = ENERGY_REL_TOL,
    allowance: float = 0.0,
) -> EnergyTrace:
    """Energies of all recorded states; flags every increase beyond tolerance plus allowance."""
    energies = [discrete_energy(state, grid, C) for state in traj.states if state.is_finite]
    times = [t for t, state in zip(traj.times, traj.states) if state.is_finite]
    violations: List[Tuple[int, float]] = []
    for k in range(1, len(energies)):
        increase = energies[k] - energies[k - 1]
        if increase > rel_tol * (1.0 + abs(energies[k - 1])) + allowance:
            violations.append((k, increase))
    if violations:
        logger.warning(f"Energy increased at {len(violations)} recorded points (first at record {violations[0][0]})")
    return EnergyTrace(times=times, energies=energies, violations=violations)


def weighted_trace(traj: Trajectory, alpha: float) -> List[float]:
    return [norm_inf_weighted(state, alpha) for state in traj.states if state.is_finite]


def blowup_indicator(
    trace: Sequence[float],
    times: Sequence[float],
    ratio_threshold: float = BLOWUP_RATIO_THRESHOLD,
    jump_threshold: float = BLOWUP_JUMP_THRESHOLD,
) -> BlowupReport:
    """Flag blow-up from a D^{-1}-norm trace.

    Triggered when final/initial exceeds ratio_threshold or any relative
    increase between consecutive records exceeds jump_threshold.

    A large profile first relaxes for a few steps before the rise sets in.
    The rise onset is the first trace minimum; `rising_after_onset` holds
    when the trace is nondecreasing from there on.
    """
    if len(trace) != len(times):
        raise ParameterError(f"Trace has {len(trace)} values but {len(times)} times")
    values = [float(v) for v in trace]
    if not values:
        return BlowupReport([], [], 1.0, None, 0.0, False)

    initial = values[0]
    if initial > 0.0:
        ratio = values[-1] / initial
    else:
        ratio = 1.0 if values[-1] == 0.0 else math.inf

    best_jump = 0.0
    best_index: Optional[int] = None
    for k in range(1, len(values)):
        prev = values[k - 1]
        if prev <= 0.0:
            continue
        jump = (values[k] - prev) / prev
        if jump > best_jump:
            best_jump = jump
            best_index = k

    steepest = None
    if best_index is not None:
        steepest = 0.5 * (float(times[best_index - 1]) + float(times[best_index]))

    onset = int(np.argmin(values))
    rising = all(b >= a for a, b in zip(values[onset:], values[onset + 1:]))

    triggered = ratio > ratio_threshold or best_jump > jump_threshold
    if triggered:
        logger.info(f"Blow-up indicator triggered: ratio={ratio:.3g}, steepest rise near t={steepest}")
    return BlowupReport(
        trace=values,
        times=[float(t) for t in times],
        growth_ratio=ratio,
        steepest_rise_time=steepest,
        max_relative_jump=best_jump,
        triggered=triggered,
        rise_onset_time=float(times[onset]),
        rising_after_onset=rising,
    )


def dissipation_step_limit(d_alpha: float, h: float, alpha: float) -> float:
    """Largest dt with guaranteed monotone energy decay: (3/4) d^-2 h^(2(1-alpha))."""
    if not 0.0 <= alpha < 1.0:
        raise ParameterError(f"alpha must lie in [0, 1), got {alpha}")
    if d_alpha == 0.0:
        return math.inf
    return 0.75 * h ** (2.0 * (1.0 - alpha)) / (d_alpha * d_alpha)


def dissipation_allowance(c: float, d_alpha: float, h: float, dt: float, alpha: float) -> float:
    """Per-step energy growth allowed by the perturbed dissipation law (alpha > 1/2)."""
    if not 0.5 < alpha < 1.0:
        raise ParameterError(f"Perturbed dissipation needs alpha in (1/2, 1), got {alpha}")
    return (64.0 / 3.0) * c * c * d_alpha * d_alpha * (
        h ** (2.0 * (alpha - 1.0)) * dt * dt + h ** (2.0 * (alpha + 1.0)) * abs(math.log(h))
    )
