"""
Executable stability checks for the semi-implicit scheme.

Each check returns a CheckReport; run_suite runs named groups of checks over
fixed parameter grids with a recorded seed.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional

import numpy as np
import scipy.special

from .errors import OutputExistsError, OutputWriteError, ParameterError, SingularMatrixError
from .grid import Grid, StateVector, make_grid, norm_inf
from .linsolve import DENSE_MAX_DIMENSION, dense_invert
from .operators import G_LOWER_BOUND, add_diagonal, assemble_C, c_alpha, g, similarity_transform

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20250601
INVERSE_TOL = 1e-10
SYMBOL_TOL = 1e-6
F_BOUND_TOL = 1e-10
F_SERIES_CUTOFF = 1e-4
LIPSCHITZ_TOL = 1e-12
DERIVATIVE_TOL = 1e-6
SYMMETRY_TOL = 1e-12


@dataclass
class CheckReport:
    name: str
    params: Dict[str, Any]
    violation: float
    passed: bool
    tolerance: float
    witness: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    message: str = ""

    def to_record(self) -> Dict[str, Any]:
        return asdict(self)


def _report(name: str, params: Dict[str, Any], violation: float, tolerance: float, **extra) -> CheckReport:
    report = CheckReport(
        name=name,
        params=params,
        violation=float(violation),
        passed=bool(violation <= tolerance),
        tolerance=tolerance,
        **extra,
    )
    if report.passed:
        logger.info(f"Check {name} {params} passed (violation {report.violation:.3e})")
    else:
        logger.warning(f"Check {name} {params} FAILED (violation {report.violation:.3e} > {tolerance:.0e})")
    return report


def _dense_grid(n: int) -> Grid:
    if n > DENSE_MAX_DIMENSION:
        raise ParameterError(f"Dense checks are limited to N <= {DENSE_MAX_DIMENSION}, got {n}")
    return make_grid(n)


def _resolvent_violation(inverse: np.ndarray) -> tuple:
    negativity = max(0.0, -float(np.min(inverse)))
    row_norm = float(np.max(np.sum(np.abs(inverse), axis=1)))
    excess = max(0.0, row_norm - 1.0)
    return max(negativity, excess), negativity, row_norm


# ===== RESOLVENT AND M-MATRIX CHECKS =====

def check_resolvent_bound(n: int, delta: float) -> CheckReport:
    """(I + delta C)^{-1} >= 0 entrywise and ||.||_inf <= 1."""
    params = {"N": n, "delta": delta}
    if delta < 0:
        raise ParameterError(f"delta must be nonnegative, got {delta}")
    grid = _dense_grid(n)
    C = assemble_C(grid)
    system = add_diagonal(C, np.zeros(n), scale=delta, shift=1.0)
    try:
        inverse = dense_invert(system).values
    except SingularMatrixError as e:
        return _report("resolvent", params, math.inf, INVERSE_TOL, message=str(e))
    violation, negativity, row_norm = _resolvent_violation(inverse)
    return _report(
        "resolvent",
        params,
        violation,
        INVERSE_TOL,
        witness={"min_entry": float(np.min(inverse)), "inf_norm": row_norm},
    )


def check_step_matrix_mproperty(n: int, dt: float, u: StateVector) -> CheckReport:
    """M = C + G(u) D^{-2}: Z-class, nonnegative diagonal, weakly dominant; resolvent bound for I + dt M."""
    params = {"N": n, "dt": dt, "u_inf": norm_inf(u)}
    grid = _dense_grid(n)
    C = assemble_C(grid)
    M = add_diagonal(C, np.asarray(g(u.values)) / (grid.nodes * grid.nodes))
    scale = float(np.max(np.abs(M.main)))

    off_positive = max(float(np.max(M.sub, initial=0.0)), float(np.max(M.sup, initial=0.0)))
    negative_diag = max(0.0, -float(np.min(M.main)))
    dominance_gap = M.off_diagonal_abs_sums() - np.abs(M.main)
    worst_row = int(np.argmax(dominance_gap))
    structural = max(off_positive, negative_diag, float(dominance_gap[worst_row])) / scale

    try:
        inverse = dense_invert(add_diagonal(M, np.zeros(n), scale=dt, shift=1.0)).values
        resolvent, _, row_norm = _resolvent_violation(inverse)
    except SingularMatrixError as e:
        return _report("step_matrix", params, math.inf, INVERSE_TOL, message=str(e))

    violation = max(structural if structural > SYMMETRY_TOL else 0.0, resolvent)
    message = "" if structural <= SYMMETRY_TOL else "weak diagonal dominance lost (g(u_i) < 0)"
    return _report(
        "step_matrix",
        params,
        violation,
        INVERSE_TOL,
        witness={"row": worst_row + 1, "dominance_gap": float(dominance_gap[worst_row]), "inf_norm": row_norm},
        message=message,
    )


def check_weighted_resolvent(n: int, dt: float, u: StateVector, alpha: float) -> CheckReport:
    """M_a = D^{-a} C D^{a} + G(u) D^{-2} has M_a 1 >= 0 and ||(I + dt M_a)^{-1}||_inf <= 1 for ||u|| <= c_a."""
    params = {"N": n, "dt": dt, "alpha": alpha, "u_inf": norm_inf(u)}
    threshold = c_alpha(alpha)
    if norm_inf(u) > threshold * (1.0 + 1e-12):
        raise ParameterError(f"State exceeds c_alpha={threshold:.6g} for alpha={alpha}")
    grid = _dense_grid(n)
    Ma = add_diagonal(similarity_transform(assemble_C(grid), alpha), np.asarray(g(u.values)) / grid.nodes**2)
    scale = float(np.max(np.abs(Ma.main)))
    row_sums = Ma.row_sums()
    worst_row = int(np.argmin(row_sums))
    structural = max(0.0, -float(row_sums[worst_row])) / scale
    try:
        inverse = dense_invert(add_diagonal(Ma, np.zeros(n), scale=dt, shift=1.0)).values
    except SingularMatrixError as e:
        return _report("weighted_resolvent", params, math.inf, INVERSE_TOL, message=str(e))
    resolvent, _, row_norm = _resolvent_violation(inverse)
    violation = max(structural if structural > SYMMETRY_TOL else 0.0, resolvent)
    return _report(
        "weighted_resolvent",
        params,
        violation,
        INVERSE_TOL,
        witness={"row": worst_row + 1, "row_sum": float(row_sums[worst_row]), "inf_norm": row_norm},
    )


def check_euclidean_resolvent(n: int, dt: float, u: StateVector) -> CheckReport:
    """||(I + dt (D^{1/2} C D^{-1/2} + G(u) D^{-2}))^{-1}||_2 <= 1."""
    params = {"N": n, "dt": dt, "u_inf": norm_inf(u)}
    grid = _dense_grid(n)
    S = add_diagonal(similarity_transform(assemble_C(grid), -0.5), np.asarray(g(u.values)) / grid.nodes**2)
    try:
        inverse = dense_invert(add_diagonal(S, np.zeros(n), scale=dt, shift=1.0))
    except SingularMatrixError as e:
        return _report("euclidean_resolvent", params, math.inf, INVERSE_TOL, message=str(e))
    spectral = inverse.spectral_norm()
    return _report(
        "euclidean_resolvent",
        params,
        max(0.0, spectral - 1.0),
        INVERSE_TOL,
        witness={"spectral_norm": spectral},
    )


# ===== DISCRETE SYMBOL AND SERIES BOUND =====

def discrete_symbol(grid: Grid, alpha: float) -> np.ndarray:
    """w = D^{2-alpha} C D^{alpha} 1 on the true N x N matrix."""
    x = grid.nodes
    return x ** (2.0 - alpha) * assemble_C(grid).matvec(x**alpha)


def check_discrete_symbol(n: int, alpha: float) -> CheckReport:
    """min_i w_i >= -alpha^2."""
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    w = discrete_symbol(make_grid(n), alpha)
    i = int(np.argmin(w))
    violation = max(0.0, -alpha * alpha - float(w[i]))
    return _report(
        "discrete_symbol",
        {"N": n, "alpha": alpha},
        violation,
        SYMBOL_TOL,
        witness={"row": i + 1, "min_w": float(w[i]), "bound": -alpha * alpha},
    )


def symbol_series_value(y: float, alpha: float) -> float:
    """f(y) truncated after the y^4 term: alpha^2 + (2c4 + c3) y^2 + (2c6 + c5) y^4."""
    c = [scipy.special.binom(alpha, j) for j in range(7)]
    return alpha * alpha + (2.0 * c[4] + c[3]) * y**2 + (2.0 * c[6] + c[5]) * y**4


def symbol_function(y: float, alpha: float) -> float:
    """f(y) = ((1 - y/2)(1 - y)^a - 2 + (1 + y/2)(1 + y)^a) / y^2.

    Evaluated through expm1/log1p so the O(1) terms cancel exactly.
    """
    if y < F_SERIES_CUTOFF:
        return symbol_series_value(y, alpha)
    up = math.expm1(alpha * math.log1p(y))
    down = math.expm1(alpha * math.log1p(-y)) if y < 1.0 else (-1.0 if alpha > 0.0 else 0.0)
    return (up + down + 0.5 * y * (up - down)) / (y * y)


def check_f_bound(alpha: float, i_max: int) -> CheckReport:
    """f(1/i) <= alpha^2 for i = 1..i_max."""
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    target = alpha * alpha
    worst = -math.inf
    worst_i = 1
    for i in range(1, i_max + 1):
        value = symbol_function(1.0 / i, alpha)
        if value - target > worst:
            worst = value - target
            worst_i = i
    return _report(
        "f_bound",
        {"alpha": alpha, "i_max": i_max},
        max(0.0, worst),
        F_BOUND_TOL,
        witness={"i": worst_i, "f_minus_alpha2": worst},
    )


# ===== NONLINEARITY =====

def check_g_lipschitz(sample_count: int = 100_000, value_range: float = 10.0, seed: int = DEFAULT_SEED) -> CheckReport:
    """|g(y) - g(z)| <= (4/3) max(|y|,|z|) |y - z| on random pairs."""
    rng = np.random.default_rng(seed)
    y = rng.uniform(-value_range, value_range, sample_count)
    z = rng.uniform(-value_range, value_range, sample_count)
    lhs = np.abs(g(y) - g(z))
    rhs = (4.0 / 3.0) * np.maximum(np.abs(y), np.abs(z)) * np.abs(y - z)
    excess = lhs - rhs
    k = int(np.argmax(excess))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(rhs > 0.0, lhs / rhs, 0.0)
    return _report(
        "g_lipschitz",
        {"samples": sample_count, "range": value_range},
        max(0.0, float(excess[k])),
        LIPSCHITZ_TOL,
        witness={"y": float(y[k]), "z": float(z[k]), "worst_ratio": float(np.max(ratios))},
        seed=seed,
    )


def check_g_derivative(sample_count: int = 10_000, value_range: float = 10.0, seed: int = DEFAULT_SEED) -> CheckReport:
    """Central-difference g'(y) satisfies |g'(y)| <= (4/3)|y|."""
    rng = np.random.default_rng(seed)
    y = rng.uniform(-value_range, value_range, sample_count)
    step = 1e-5
    derivative = (g(y + step) - g(y - step)) / (2.0 * step)
    excess = np.abs(derivative) - (4.0 / 3.0) * np.abs(y)
    k = int(np.argmax(excess))
    return _report(
        "g_derivative",
        {"samples": sample_count, "range": value_range},
        max(0.0, float(excess[k])),
        DERIVATIVE_TOL,
        witness={"y": float(y[k]), "derivative": float(derivative[k])},
        seed=seed,
    )


def check_g_range(sample_count: int = 100_000, value_range: float = 10.0, seed: int = DEFAULT_SEED) -> CheckReport:
    """g is even and takes values in [G_LOWER_BOUND, 1]."""
    rng = np.random.default_rng(seed)
    y = rng.uniform(-value_range, value_range, sample_count)
    values = np.asarray(g(y))
    asymmetry = np.abs(values - np.asarray(g(-y)))
    excess = np.maximum(G_LOWER_BOUND - values, values - 1.0)
    k = int(np.argmax(np.maximum(asymmetry, excess)))
    return _report(
        "g_range",
        {"samples": sample_count, "range": value_range},
        max(0.0, float(asymmetry[k]), float(excess[k])),
        SYMMETRY_TOL,
        witness={"y": float(y[k]), "g": float(values[k]), "min_g": float(values.min())},
        seed=seed,
    )


# ===== SYMMETRY =====

def check_DC_spd(n: int, seed: int = DEFAULT_SEED, samples: int = 100) -> CheckReport:
    """D C symmetric and <DCv, v> > 0 for random nonzero v."""
    grid = _dense_grid(n)
    DC = grid.nodes[:, None] * assemble_C(grid).to_dense()
    scale = float(np.max(np.abs(DC)))
    asymmetry = float(np.max(np.abs(DC - DC.T))) / scale
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((samples, n))
    quad = np.einsum("ki,ij,kj->k", vectors, DC, vectors)
    min_quad = float(np.min(quad))
    min_eig = float(np.min(np.linalg.eigvalsh(0.5 * (DC + DC.T))))
    violation = max(asymmetry if asymmetry > SYMMETRY_TOL else 0.0, 0.0 if min_quad > 0.0 else -min_quad + 1.0)
    return _report(
        "dc_spd",
        {"N": n},
        violation,
        SYMMETRY_TOL,
        witness={"asymmetry": asymmetry, "min_quadratic_form": min_quad, "min_eigenvalue": min_eig},
        seed=seed,
    )


# ===== SUITE =====

def _admissible_states(grid: Grid, count: int, bound: float, rng: np.random.Generator) -> List[StateVector]:
    return [StateVector(rng.uniform(-bound, bound, grid.n_interior), grid) for _ in range(count)]


def _suite_resolvent(seed: int) -> List[CheckReport]:
    return [check_resolvent_bound(n, d) for n in (1, 2, 8, 32, 64) for d in (0.0, 0.01, 1.0, 10.0)]


def _suite_step_matrix(seed: int) -> List[CheckReport]:
    rng = np.random.default_rng(seed)
    grid = make_grid(32)
    return [check_step_matrix_mproperty(32, 1e-3, u) for u in _admissible_states(grid, 100, math.pi / 2, rng)]


def _suite_discrete_symbol(seed: int) -> List[CheckReport]:
    return [check_discrete_symbol(n, a) for a in (0.0, 0.25, 0.5, 0.75, 1.0) for n in (16, 256, 2048)]


def _suite_f_bound(seed: int) -> List[CheckReport]:
    return [check_f_bound(a, 10_000) for a in (0.0, 0.3, 0.6, 1.0)]


def _suite_g_lipschitz(seed: int) -> List[CheckReport]:
    return [check_g_lipschitz(100_000, 10.0, seed)]


def _suite_g_derivative(seed: int) -> List[CheckReport]:
    return [check_g_derivative(10_000, 10.0, seed)]


def _suite_g_range(seed: int) -> List[CheckReport]:
    return [check_g_range(100_000, 10.0, seed)]


def _suite_dc_spd(seed: int) -> List[CheckReport]:
    return [check_DC_spd(n, seed) for n in (1, 3, 16, 64)]


def _suite_weighted_resolvent(seed: int) -> List[CheckReport]:
    rng = np.random.default_rng(seed)
    grid = make_grid(32)
    reports = []
    for alpha in (0.25, 0.5, math.sqrt(2.0 / math.pi)):
        bound = c_alpha(alpha)
        for u in _admissible_states(grid, 20, bound, rng):
            reports.append(check_weighted_resolvent(32, 1e-3, u, alpha))
    return reports


def _suite_euclidean_resolvent(seed: int) -> List[CheckReport]:
    rng = np.random.default_rng(seed)
    grid = make_grid(32)
    return [check_euclidean_resolvent(32, dt, u) for dt in (1e-4, 1e-2) for u in _admissible_states(grid, 20, math.pi / 2, rng)]


SUITES: Dict[str, Callable[[int], List[CheckReport]]] = {
    "resolvent": _suite_resolvent,
    "step_matrix": _suite_step_matrix,
    "discrete_symbol": _suite_discrete_symbol,
    "f_bound": _suite_f_bound,
    "g_lipschitz": _suite_g_lipschitz,
    "g_derivative": _suite_g_derivative,
    "g_range": _suite_g_range,
    "dc_spd": _suite_dc_spd,
    "weighted_resolvent": _suite_weighted_resolvent,
    "euclidean_resolvent": _suite_euclidean_resolvent,
}


def run_suite(names: Iterable[str] = ("all",), seed: int = DEFAULT_SEED) -> List[CheckReport]:
    selected = list(names)
    if "all" in selected:
        selected = list(SUITES)
    unknown = [name for name in selected if name not in SUITES]
    if unknown:
        raise ParameterError(f"Unknown check suite(s): {', '.join(unknown)}; known: {', '.join(SUITES)}")
    reports: List[CheckReport] = []
    for name in selected:
        logger.info(f"Running check suite {name} (seed {seed})")
        reports.extend(SUITES[name](seed))
    return reports


def render_table(reports: List[CheckReport]) -> str:
    lines = [f"{'check':<20} {'params':<44} {'violation':>11}  status"]
    lines.append("-" * len(lines[0]) + "-" * 6)
    for r in reports:
        params = ", ".join(f"{k}={_short(v)}" for k, v in r.params.items())
        status = "✅ PASS" if r.passed else "❌ FAIL"
        lines.append(f"{r.name:<20} {params:<44} {r.violation:>11.3e}  {status}")
    passed = sum(1 for r in reports if r.passed)
    lines.append(f"{passed}/{len(reports)} checks passed")
    return "\n".join(lines)


def _short(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


def write_report(reports: List[CheckReport], path: Path, force: bool = False) -> Path:
    """One JSON record per check: name, params, violation, pass."""
    path = Path(path)
    if path.exists() and not force:
        raise OutputExistsError(f"Refusing to overwrite {path} (use --force)")
    payload = {
        "total_checks": len(reports),
        "passed_checks": sum(1 for r in reports if r.passed),
        "checks": [
            {"name": r.name, "params": r.params, "violation": r.violation, "pass": r.passed, "witness": r.witness}
            for r in reports
        ],
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="\n") as f:
            json.dump(payload, f, indent=2, default=float)
            f.write("\n")
    except OSError as e:
        raise OutputWriteError(f"Could not write check report {path}: {e}") from e
    return path
