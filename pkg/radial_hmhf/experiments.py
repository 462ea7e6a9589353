"""
Convergence studies, trace experiments and their CSV artifacts.

Studies compare end-time states against a cached reference computed with
semi-implicit Euler and accepted only when a BDF2 run at the same resolution
agrees with it. Rows of a study are independent evolutions and can run in a
process pool.
"""

import csv
import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .diagnostics import blowup_indicator, dissipation_step_limit, energy_trace, weighted_trace
from .errors import DivergenceError, OutputExistsError, OutputWriteError, ParameterError, ReferenceValidationError
from .grid import (
    Grid,
    StateVector,
    TimeGrid,
    make_grid,
    norm_Dh,
    norm_inf,
    norm_inf_weighted,
    sample_initial,
    time_grid_from_step,
)
from .operators import TridiagonalOperator, assemble_C, c_alpha, stability_params
from .reference_cache import (
    DEFAULT_REFERENCE_DT,
    DEFAULT_VALIDATION_TOL,
    ReferenceCache,
    ReferenceDescriptor,
    ReferenceSolution,
    grid_nests,
    restrict,
)
from .stepper import Scheme, SchemeConfig, Trajectory, evolve, is_nonincreasing

logger = logging.getLogger(__name__)

TIME_LADDER = (1e-2, 5e-3, 2.5e-3, 1.25e-3, 6.25e-4)
TIME_STUDY_N = 999
SPACE_LADDER = (3, 7, 15, 31, 63, 127)
SPACE_REFERENCE_N = 2047
# Kept state of the space-study reference; Euler rows then carry their own time error.
SPACE_REFERENCE_SCHEME = Scheme.BDF2.value
STUDY_FINAL_TIME = 0.1
MAX_TRACE_RECORDS = 10_000
WEIGHTED_TRACE_ALPHA = math.sqrt(2.0 / math.pi)


class InitialCondition(str, enum.Enum):
    SMOOTH = "smooth"
    BLOWUP = "blowup"
    ZERO = "zero"
    CUSTOM = "custom"


PRESET_AMPLITUDES = {
    InitialCondition.SMOOTH: math.pi,
    InitialCondition.BLOWUP: 9.0 * math.pi,
    InitialCondition.ZERO: 0.0,
}


class TraceKind(str, enum.Enum):
    SOLUTION = "solution"
    WEIGHTED_NORM = "weighted"
    ENERGY = "energy"
    BLOWUP = "blowup"


def resolve_amplitude(ic: InitialCondition, amplitude: Optional[float] = None) -> float:
    if ic is InitialCondition.CUSTOM:
        if amplitude is None:
            raise ParameterError("--ic custom needs an amplitude")
        if not math.isfinite(amplitude):
            raise ParameterError(f"Amplitude must be finite, got {amplitude}")
        return float(amplitude)
    return PRESET_AMPLITUDES[ic]


def initial_profile(ic: InitialCondition, amplitude: Optional[float] = None) -> Callable[[float], float]:
    """x -> A (1 - x) x with A fixed by the preset or given for CUSTOM."""
    a = resolve_amplitude(ic, amplitude)

    def profile(x: float) -> float:
        return a * (1.0 - x) * x

    return profile


@dataclass
class ExperimentConfig:
    ic: InitialCondition
    final_time: float
    n: int
    dt: float
    scheme: Scheme = Scheme.EULER_SI
    amplitude: Optional[float] = None
    output: Optional[Path] = None
    reference: Optional[ReferenceDescriptor] = None

    def __post_init__(self):
        try:
            self.ic = InitialCondition(self.ic)
            self.scheme = Scheme(self.scheme)
        except ValueError as e:
            raise ParameterError(str(e)) from e
        self.amplitude = resolve_amplitude(self.ic, self.amplitude)
        if self.n < 1:
            raise ParameterError(f"N must be at least 1, got {self.n}")
        time_grid_from_step(self.final_time, self.dt)

    @property
    def time(self) -> TimeGrid:
        return time_grid_from_step(self.final_time, self.dt)

    @property
    def grid(self) -> Grid:
        return make_grid(self.n)

    def initial_state(self, grid: Optional[Grid] = None) -> StateVector:
        return sample_initial(initial_profile(self.ic, self.amplitude), grid or self.grid)

    def reference_descriptor(
        self,
        n: Optional[int] = None,
        dt: Optional[float] = None,
        validation_tol: float = DEFAULT_VALIDATION_TOL,
        scheme: str = Scheme.EULER_SI.value,
    ) -> ReferenceDescriptor:
        """The configured reference, or one at N (default: this N) and dt 1e-6 scaled by T/0.1.

        `scheme` picks which of the two validated end states is kept.
        """
        if self.reference is not None:
            return self.reference
        return ReferenceDescriptor(
            ic=self.ic.value,
            amplitude=self.amplitude,
            n=n if n is not None else self.n,
            dt=dt if dt is not None else DEFAULT_REFERENCE_DT * (self.final_time / STUDY_FINAL_TIME),
            final_time=self.final_time,
            scheme=scheme,
            validation_tol=validation_tol,
        )


# ===== REFERENCE SOLUTIONS =====

def _final_values(args: Tuple[str, float, int, float, float, str]) -> np.ndarray:
    """One full evolution, recording only the end state. Top-level so process pools can pickle it."""
    ic, amplitude, n, dt, final_time, scheme = args
    grid = make_grid(n)
    u0 = sample_initial(initial_profile(InitialCondition(ic), amplitude), grid)
    time = time_grid_from_step(final_time, dt)
    traj = evolve(u0, SchemeConfig(Scheme(scheme), time, monitor_stride=time.step_count), grid)
    if traj.diverged:
        raise DivergenceError(f"{scheme} run N={n}, dt={dt:g} diverged: {traj.divergence_reason}")
    return np.array(traj.final_state.values, copy=True)


def _map_rows(jobs: Sequence[Tuple], workers: int) -> List[np.ndarray]:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            return list(pool.map(_final_values, jobs))
    return [_final_values(job) for job in jobs]


def compute_reference(
    descriptor: ReferenceDescriptor,
    cache: Optional[ReferenceCache] = None,
    jobs: int = 1,
) -> ReferenceSolution:
    """Load the reference from cache or compute it and gate it against BDF2.

    Euler and BDF2 run at the same resolution; the descriptor's scheme names
    the end state that is kept once the two agree.
    """
    if descriptor.scheme not in (Scheme.EULER_SI.value, Scheme.BDF2.value):
        raise ParameterError(f"Reference scheme must be euler or bdf2, got {descriptor.scheme!r}")
    if cache is not None:
        cached = cache.load(descriptor)
        if cached is not None:
            return cached

    logger.info(
        f"Computing reference {descriptor.ic} N={descriptor.n} dt={descriptor.dt:g} T={descriptor.final_time:g}"
    )
    base = (descriptor.ic, descriptor.amplitude, descriptor.n, descriptor.dt, descriptor.final_time)
    euler_values, bdf2_values = _map_rows(
        [base + (Scheme.EULER_SI.value,), base + (Scheme.BDF2.value,)], jobs
    )
    grid = make_grid(descriptor.n)
    discrepancy = norm_Dh(StateVector(euler_values, grid) - StateVector(bdf2_values, grid))
    if discrepancy > descriptor.validation_tol:
        logger.error(f"Reference rejected: discrepancy {discrepancy:.3e} > {descriptor.validation_tol:.1e}")
        raise ReferenceValidationError(discrepancy, descriptor.validation_tol)
    logger.info(f"Reference accepted: Euler/BDF2 discrepancy {discrepancy:.3e}")

    kept = bdf2_values if descriptor.scheme == Scheme.BDF2.value else euler_values
    ref = ReferenceSolution(descriptor=descriptor, values=kept, discrepancy=discrepancy)
    if cache is not None:
        cache.store(ref)
    return ref


def end_time_error(u_final: StateVector, ref_on_coarse: StateVector) -> float:
    return norm_Dh(u_final - ref_on_coarse)


def eoc(errors: Sequence[float], ratio: float = 2.0) -> List[float]:
    """Entry k is ln(e_k / e_{k+1}) / ln(ratio)."""
    if not ratio > 1.0:
        raise ParameterError(f"Refinement ratio must exceed 1, got {ratio}")
    if any(not e > 0.0 for e in errors):
        raise ParameterError(f"EOC needs positive errors, got {list(errors)}")
    log_ratio = math.log(ratio)
    return [math.log(errors[k] / errors[k + 1]) / log_ratio for k in range(len(errors) - 1)]


# ===== CONVERGENCE STUDIES =====

@dataclass
class ConvergenceRow:
    param: float
    error: float
    eoc: Optional[float] = None


@dataclass
class ConvergenceTable:
    parameter: str
    rows: List[ConvergenceRow] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_errors(
        cls,
        parameter: str,
        params: Sequence[float],
        errors: Sequence[float],
        ratio: float = 2.0,
        metadata: Optional[Dict[str, Any]] = None,
    ) -> "ConvergenceTable":
        orders: List[Optional[float]] = [None] * max(len(errors) - 1, 0)
        if len(errors) > 1 and all(e > 0.0 for e in errors):
            orders = list(eoc(errors, ratio))
        elif len(errors) > 1:
            logger.warning("Some errors are zero; EOC column left blank")
        rows = [
            ConvergenceRow(param=p, error=e, eoc=orders[k - 1] if k > 0 else None)
            for k, (p, e) in enumerate(zip(params, errors))
        ]
        return cls(parameter=parameter, rows=rows, metadata=dict(metadata or {}))

    @property
    def errors(self) -> List[float]:
        return [row.error for row in self.rows]

    @property
    def orders(self) -> List[float]:
        return [row.eoc for row in self.rows if row.eoc is not None]

    def csv_rows(self) -> Tuple[List[str], List[List[str]]]:
        body = [
            [f"{row.param:.5e}", f"{row.error:.10e}", "" if row.eoc is None else f"{row.eoc:.4f}"]
            for row in self.rows
        ]
        return ["param", "error_Dh", "eoc"], body


def _ladder_ratio(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 2.0
    return float(values[0]) / float(values[1])


def run_time_convergence(
    base: ExperimentConfig,
    dts: Sequence[float] = TIME_LADDER,
    cache: Optional[ReferenceCache] = None,
    jobs: int = 1,
) -> ConvergenceTable:
    """Fixed grid, halving dt; one shared reference on the same grid."""
    descriptor = base.reference_descriptor()
    if descriptor.n != base.n:
        raise ParameterError(f"Time study reference must share the grid N={base.n}, got N={descriptor.n}")
    for dt in dts:
        time_grid_from_step(base.final_time, dt)
    ref = compute_reference(descriptor, cache, jobs)
    grid = base.grid
    ref_on_grid = restrict(ref, grid)

    finals = _map_rows(
        [(base.ic.value, base.amplitude, base.n, dt, base.final_time, base.scheme.value) for dt in dts], jobs
    )
    errors = []
    for dt, values in zip(dts, finals):
        error = end_time_error(StateVector(values, grid), ref_on_grid)
        logger.info(f"Time study dt={dt:.5e}: error {error:.4e}")
        errors.append(error)
    return ConvergenceTable.from_errors(
        "dt",
        list(dts),
        errors,
        ratio=_ladder_ratio(dts),
        metadata={
            "mode": "time",
            "N": base.n,
            "T": base.final_time,
            "ic": base.ic.value,
            "reference_dt": descriptor.dt,
            "reference_scheme": descriptor.scheme,
            "reference_discrepancy": ref.discrepancy,
        },
    )


def run_space_convergence(
    base: ExperimentConfig,
    ns: Sequence[int] = SPACE_LADDER,
    reference_n: int = SPACE_REFERENCE_N,
    cache: Optional[ReferenceCache] = None,
    jobs: int = 1,
) -> ConvergenceTable:
    """Fixed dt, halving h; reference on a nested finer grid, compared by injection.

    The default reference keeps the BDF2 state, so each row's error is its
    spatial error plus the time error of the row scheme at this dt.
    """
    descriptor = base.reference_descriptor(n=reference_n, dt=base.dt, scheme=SPACE_REFERENCE_SCHEME)
    for n in ns:
        if not grid_nests(descriptor.n, make_grid(n)):
            raise ParameterError(f"Grid N={n} is not nested in the reference grid N={descriptor.n}")
    ref = compute_reference(descriptor, cache, jobs)

    finals = _map_rows(
        [(base.ic.value, base.amplitude, n, base.dt, base.final_time, base.scheme.value) for n in ns], jobs
    )
    spacings = [1.0 / (n + 1) for n in ns]
    errors = []
    for n, h, values in zip(ns, spacings, finals):
        grid = make_grid(n)
        error = end_time_error(StateVector(values, grid), restrict(ref, grid))
        logger.info(f"Space study h={h:.5e}: error {error:.4e}")
        errors.append(error)
    return ConvergenceTable.from_errors(
        "h",
        spacings,
        errors,
        ratio=_ladder_ratio(spacings),
        metadata={
            "mode": "space",
            "dt": base.dt,
            "T": base.final_time,
            "ic": base.ic.value,
            "reference_N": descriptor.n,
            "reference_scheme": descriptor.scheme,
            "reference_discrepancy": ref.discrepancy,
        },
    )


# ===== TRACE EXPERIMENTS =====

@dataclass
class ExperimentReport:
    kind: TraceKind
    header: List[str]
    rows: List[Tuple[float, ...]] = field(default_factory=list)
    diverged: bool = False
    divergence_reason: Optional[str] = None
    steps_taken: int = 0
    summary: Dict[str, Any] = field(default_factory=dict)

    @property
    def values(self) -> List[float]:
        return [row[-1] for row in self.rows]

    def csv_rows(self) -> Tuple[List[str], List[List[str]]]:
        body = []
        for row in self.rows:
            if self.kind is TraceKind.SOLUTION:
                t, x, u = row
                body.append([f"{t:.10g}", f"{x:.10g}", f"{u:.17g}"])
            else:
                t, value = row
                body.append([f"{t:.10g}", f"{value:.17g}"])
        return list(self.header), body


def default_stride(step_count: int, max_records: int = MAX_TRACE_RECORDS) -> int:
    """Smallest stride k with ceil(M / k) <= max_records."""
    if step_count < 1 or max_records < 1:
        raise ParameterError(f"Need M >= 1 and max_records >= 1, got {step_count}, {max_records}")
    return max(1, math.ceil(step_count / max_records))


def run_trace_experiment(
    config: ExperimentConfig,
    kind: TraceKind,
    alpha: Optional[float] = None,
    stride: Optional[int] = None,
) -> ExperimentReport:
    kind = TraceKind(kind)
    time = config.time
    grid = config.grid
    if stride is None:
        stride = time.step_count if kind is TraceKind.SOLUTION else default_stride(time.step_count)
    if kind is TraceKind.WEIGHTED_NORM:
        alpha = WEIGHTED_TRACE_ALPHA if alpha is None else alpha
    elif kind is TraceKind.BLOWUP:
        alpha = 1.0

    C = assemble_C(grid)
    u0 = config.initial_state(grid)
    traj = evolve(u0, SchemeConfig(config.scheme, time, monitor_stride=stride), grid, C=C)
    report = ExperimentReport(
        kind=kind,
        header=["t", "x", "u"] if kind is TraceKind.SOLUTION else ["t", "value"],
        diverged=traj.diverged,
        divergence_reason=traj.divergence_reason,
        steps_taken=traj.steps_taken,
        summary={"stride": stride, "records": len(traj.times)},
    )

    if kind is TraceKind.SOLUTION:
        for t, state in zip(traj.times, traj.states):
            report.rows.extend((t, float(x), float(u)) for x, u in zip(grid.nodes, state.values))
        finite = [s for s in traj.states if s.is_finite]
        if finite:
            weighted = [norm_inf_weighted(finite[0], 1.0), norm_inf_weighted(finite[-1], 1.0)]
            report.summary["final_max_norm"] = norm_inf(finite[-1])
            report.summary["weighted_growth"] = blowup_indicator(weighted, [0.0, 1.0]).growth_ratio
    elif kind is TraceKind.ENERGY:
        _energy_rows(report, traj, grid, C, u0, alpha, time.step)
    else:
        _weighted_rows(report, traj, alpha)

    logger.info(f"Trace {kind.value}: {len(report.rows)} rows, diverged={report.diverged}")
    return report


def _energy_rows(
    report: ExperimentReport,
    traj: Trajectory,
    grid: Grid,
    C: TridiagonalOperator,
    u0: StateVector,
    alpha: Optional[float],
    dt: float,
):
    trace = energy_trace(traj, grid, C)
    report.rows = list(zip(trace.times, trace.energies))
    report.summary.update(
        {
            "violations": len(trace.violations),
            "nonincreasing": trace.dissipative,
            "initial_energy": trace.energies[0] if trace.energies else None,
            "final_energy": trace.energies[-1] if trace.energies else None,
        }
    )
    a = WEIGHTED_TRACE_ALPHA if alpha is None else alpha
    if 0.0 <= a < 1.0:
        params = stability_params(a, u0)
        limit = dissipation_step_limit(params.d_alpha, grid.spacing, a)
        report.summary.update(
            {"alpha": a, "d_alpha": params.d_alpha, "step_limit": limit, "within_step_limit": dt <= limit}
        )


def _weighted_rows(report: ExperimentReport, traj: Trajectory, alpha: float):
    values = weighted_trace(traj, alpha)
    times = [t for t, state in zip(traj.times, traj.states) if state.is_finite]
    report.rows = list(zip(times, values))
    report.summary["alpha"] = alpha
    report.summary["nonincreasing"] = is_nonincreasing(values)
    if alpha < 1.0:
        report.summary["c_alpha"] = c_alpha(alpha)
    if report.kind is TraceKind.BLOWUP:
        blowup = blowup_indicator(values, times)
        report.summary.update(
            {
                "triggered": blowup.triggered,
                "growth_ratio": blowup.growth_ratio,
                "steepest_rise_time": blowup.steepest_rise_time,
                "max_relative_jump": blowup.max_relative_jump,
                "rise_onset_time": blowup.rise_onset_time,
                "nondecreasing": blowup.rising_after_onset,
            }
        )


# ===== CSV OUTPUT =====

def write_csv(report: Union[ConvergenceTable, ExperimentReport], path, force: bool = False) -> Path:
    """Header plus one row per record, `\\n`-terminated."""
    path = Path(path)
    if path.exists() and not force:
        raise OutputExistsError(f"Refusing to overwrite {path} (use --force)")
    header, body = report.csv_rows()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="ascii") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(body)
    except OSError as e:
        raise OutputWriteError(f"Could not write {path}: {e}") from e
    logger.info(f"Wrote {len(body)} rows to {path}")
    return path
