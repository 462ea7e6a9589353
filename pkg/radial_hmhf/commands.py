"""
Command functions behind the CLI.

Every command returns a result dict with at least `success`, `message` and
`exit_code`, and logs itself to the run ledger. Domain exceptions never
escape; they are mapped onto the stable exit codes.
"""

import hashlib
import logging
import math
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence

from .errors import (
    CacheError,
    DivergenceError,
    GridError,
    HMHFError,
    OutputExistsError,
    OutputWriteError,
    ParameterError,
    ReferenceValidationError,
    UsageError,
)
from .experiments import (
    SPACE_LADDER,
    SPACE_REFERENCE_N,
    SPACE_REFERENCE_SCHEME,
    TIME_LADDER,
    TIME_STUDY_N,
    ExperimentConfig,
    TraceKind,
    run_space_convergence,
    run_time_convergence,
    run_trace_experiment,
    write_csv,
)
from .reference_cache import DEFAULT_VALIDATION_TOL, ReferenceCache
from .run_ledger import RunLedger
from .verify import DEFAULT_SEED, check_resolvent_bound, render_table, run_suite, write_report

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DIVERGENCE = 2
EXIT_IO = 3


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, DivergenceError):
        return EXIT_DIVERGENCE
    if isinstance(error, (OutputExistsError, OutputWriteError, CacheError)):
        return EXIT_IO
    return EXIT_USAGE


def file_checksum(path) -> Optional[str]:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError:
        return None


def log_command(
    ledger: Optional[RunLedger],
    command: str,
    arguments: Dict[str, Any],
    body: Callable[[Optional[str]], Dict[str, Any]],
) -> Dict[str, Any]:
    """Run `body(run_id)` under a ledger entry and turn exceptions into result dicts."""
    logger.info(f"log_command: {command} {arguments}")
    run_id = None
    if ledger is not None:
        try:
            run_id = ledger.start_run(command, arguments)
        except Exception as e:
            logger.error(f"Failed to open ledger entry for {command}: {e}")

    try:
        result = body(run_id)
    except (UsageError, ParameterError, GridError, ReferenceValidationError, DivergenceError) as e:
        logger.error(f"{command} failed: {e}")
        result = {"success": False, "message": str(e), "exit_code": exit_code_for(e)}
        if isinstance(e, ReferenceValidationError):
            result.update({"discrepancy": e.discrepancy, "tolerance": e.tolerance})
    except (OutputExistsError, OutputWriteError, CacheError) as e:
        logger.error(f"{command} could not write output: {e}")
        result = {"success": False, "message": str(e), "exit_code": EXIT_IO}
    except HMHFError as e:
        logger.error(f"{command} failed: {e}", exc_info=True)
        result = {"success": False, "message": str(e), "exit_code": EXIT_USAGE}
    except Exception as e:
        logger.error(f"Unexpected error in {command}: {e}", exc_info=True)
        result = {"success": False, "message": f"Unexpected error: {e}", "exit_code": EXIT_USAGE}

    result.setdefault("exit_code", EXIT_OK if result.get("success") else EXIT_USAGE)
    result["run_id"] = run_id
    if ledger is not None and run_id is not None:
        try:
            summary = {k: v for k, v in result.items() if k not in ("table", "run_id")}
            status = "ok" if result["success"] else ("diverged" if result["exit_code"] == EXIT_DIVERGENCE else "failed")
            ledger.finish_run(run_id, status, result["exit_code"], summary)
            for kind, path in result.get("artifacts", {}).items():
                ledger.record_artifact(run_id, kind, path, file_checksum(path))
        except Exception as e:
            logger.error(f"Failed to log {command} to ledger: {e}")
    return result


def _record_seed(arguments: Dict[str, Any], seed: Optional[int]) -> None:
    # evolutions draw no random numbers; the seed is only kept for the ledger
    if seed is not None:
        arguments["seed"] = seed


def _config(ic, n, dt, final_time, scheme="euler", amplitude=None) -> ExperimentConfig:
    return ExperimentConfig(ic=ic, final_time=final_time, n=n, dt=dt, scheme=scheme, amplitude=amplitude)


# ===== RUN =====

def run_solution(
    ic: str,
    n: int,
    dt: float,
    final_time: float,
    out,
    scheme: str = "euler",
    amplitude: Optional[float] = None,
    stride: Optional[int] = None,
    force: bool = False,
    seed: Optional[int] = None,
    ledger: Optional[RunLedger] = None,
) -> Dict[str, Any]:
    arguments = {"ic": ic, "N": n, "dt": dt, "T": final_time, "scheme": scheme,
                 "amplitude": amplitude, "stride": stride, "out": str(out)}
    _record_seed(arguments, seed)

    def body(run_id):
        config = _config(ic, n, dt, final_time, scheme, amplitude)
        report = run_trace_experiment(config, TraceKind.SOLUTION, stride=stride)
        path = write_csv(report, out, force=force)
        result = {
            "success": not report.diverged,
            "message": f"Wrote {len(report.rows)} solution rows to {path}",
            "exit_code": EXIT_DIVERGENCE if report.diverged else EXIT_OK,
            "steps_taken": report.steps_taken,
            "artifacts": {"solution": str(path)},
            **report.summary,
        }
        if report.diverged:
            result["message"] = f"Divergence: {report.divergence_reason}; partial output in {path}"
        return result

    return log_command(ledger, "run", arguments, body)


# ===== CONVERGENCE =====

def convergence_study(
    mode: str,
    ic: str = "smooth",
    final_time: float = 0.1,
    n: Optional[int] = None,
    dts: Optional[Sequence[float]] = None,
    ns: Optional[Sequence[int]] = None,
    dt: Optional[float] = None,
    amplitude: Optional[float] = None,
    scheme: str = "euler",
    reference_n: Optional[int] = None,
    reference_dt: Optional[float] = None,
    validation_tol: float = DEFAULT_VALIDATION_TOL,
    ref_cache=None,
    jobs: int = 1,
    out=None,
    force: bool = False,
    seed: Optional[int] = None,
    ledger: Optional[RunLedger] = None,
) -> Dict[str, Any]:
    arguments = {"mode": mode, "ic": ic, "T": final_time, "N": n, "dt": list(dts) if dts else dt,
                 "ns": list(ns) if ns else None, "reference_N": reference_n, "reference_dt": reference_dt,
                 "validation_tol": validation_tol, "ref_cache": str(ref_cache) if ref_cache else None,
                 "jobs": jobs, "out": str(out) if out else None}
    _record_seed(arguments, seed)

    def body(run_id):
        cache = ReferenceCache(ref_cache) if ref_cache else None
        if mode == "time":
            ladder = list(dts or TIME_LADDER)
            grid_n = n or TIME_STUDY_N
            config = _config(ic, grid_n, ladder[0], final_time, scheme, amplitude)
            config.reference = config.reference_descriptor(dt=reference_dt, validation_tol=validation_tol)
            table = run_time_convergence(config, ladder, cache=cache, jobs=jobs)
        elif mode == "space":
            ladder = list(ns or SPACE_LADDER)
            row_dt = dt if dt is not None else (dts[0] if dts else 1e-6)
            config = _config(ic, ladder[0], row_dt, final_time, scheme, amplitude)
            config.reference = config.reference_descriptor(
                n=reference_n or SPACE_REFERENCE_N,
                dt=reference_dt or row_dt,
                validation_tol=validation_tol,
                scheme=SPACE_REFERENCE_SCHEME,
            )
            table = run_space_convergence(config, ladder, reference_n=config.reference.n, cache=cache, jobs=jobs)
        else:
            raise UsageError(f"--mode must be time or space, got {mode!r}")

        result = {
            "success": True,
            "message": f"{mode} study: {len(table.rows)} rows",
            "exit_code": EXIT_OK,
            "rows": [{"param": r.param, "error_Dh": r.error, "eoc": r.eoc} for r in table.rows],
            "metadata": table.metadata,
            "artifacts": {},
        }
        if out:
            result["artifacts"]["convergence"] = str(write_csv(table, out, force=force))
        return result

    return log_command(ledger, "convergence", arguments, body)


# ===== VERIFY =====

def verify_lemmas(
    suites: Sequence[str] = ("all",),
    seed: int = DEFAULT_SEED,
    n: Optional[int] = None,
    delta: Optional[float] = None,
    report_path=None,
    force: bool = False,
    ledger: Optional[RunLedger] = None,
) -> Dict[str, Any]:
    arguments = {"suite": list(suites), "seed": seed, "N": n, "delta": delta,
                 "report": str(report_path) if report_path else None}

    def body(run_id):
        if n is not None or delta is not None:
            if list(suites) != ["resolvent"]:
                raise UsageError("--N/--delta only apply to --suite resolvent")
            reports = [check_resolvent_bound(n if n is not None else 8, delta if delta is not None else 0.01)]
        else:
            try:
                reports = run_suite(suites, seed)
            except ParameterError as e:
                raise UsageError(str(e)) from e
        failed = [r for r in reports if not r.passed]
        result = {
            "success": not failed,
            "message": f"{len(reports) - len(failed)}/{len(reports)} checks passed",
            "exit_code": EXIT_OK if not failed else EXIT_USAGE,
            "total_checks": len(reports),
            "failed_checks": [{"name": r.name, "params": r.params, "violation": r.violation} for r in failed],
            "table": render_table(reports),
            "artifacts": {},
        }
        if report_path:
            result["artifacts"]["verify_report"] = str(write_report(reports, report_path, force=force))
        return result

    return log_command(ledger, "verify", arguments, body)


# ===== TRACE =====

def trace_run(
    kind: str,
    ic: str,
    n: int,
    dt: float,
    final_time: float,
    out,
    alpha: Optional[float] = None,
    scheme: str = "euler",
    amplitude: Optional[float] = None,
    stride: Optional[int] = None,
    force: bool = False,
    seed: Optional[int] = None,
    ledger: Optional[RunLedger] = None,
) -> Dict[str, Any]:
    arguments = {"kind": kind, "ic": ic, "N": n, "dt": dt, "T": final_time, "alpha": alpha,
                 "scheme": scheme, "amplitude": amplitude, "stride": stride, "out": str(out)}
    _record_seed(arguments, seed)

    def body(run_id):
        try:
            trace_kind = TraceKind(kind)
        except ValueError as e:
            raise UsageError(f"Unknown trace kind {kind!r}") from e
        if trace_kind is TraceKind.SOLUTION:
            raise UsageError("Use the run subcommand for solution profiles")
        if alpha is not None and not 0.0 <= alpha <= 1.0:
            raise ParameterError(f"--alpha must lie in [0, 1], got {alpha}")
        config = _config(ic, n, dt, final_time, scheme, amplitude)
        report = run_trace_experiment(config, trace_kind, alpha=alpha, stride=stride)
        path = write_csv(report, out, force=force)
        summary = {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in report.summary.items()}
        result = {
            "success": not report.diverged,
            "message": f"Wrote {len(report.rows)} {trace_kind.value} records to {path}",
            "exit_code": EXIT_DIVERGENCE if report.diverged else EXIT_OK,
            "steps_taken": report.steps_taken,
            "artifacts": {trace_kind.value: str(path)},
            **summary,
        }
        if report.diverged:
            result["message"] = f"Divergence: {report.divergence_reason}; partial trace in {path}"
        return result

    return log_command(ledger, "trace", arguments, body)


# ===== HISTORY =====

def list_history(ledger: Optional[RunLedger], limit: int = 20, command: Optional[str] = None) -> Dict[str, Any]:
    if ledger is None:
        return {"success": False, "message": "Run ledger is unavailable", "exit_code": EXIT_IO}
    try:
        runs = ledger.list_runs(limit=limit, command=command)
    except Exception as e:
        logger.error(f"Failed to read run history: {e}")
        return {"success": False, "message": f"Failed to read run history: {e}", "exit_code": EXIT_IO}
    return {
        "success": True,
        "message": f"{len(runs)} runs",
        "exit_code": EXIT_OK,
        "runs": runs,
    }
