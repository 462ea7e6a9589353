#!/usr/bin/env python3
"""
Acceptance runner for the radial HMHF solver.

Loads a JSON case set (one case per acceptance criterion), runs every case
off the event loop, and writes a JSON report with measured against expected
values.
"""

import asyncio
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

# Add project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from radial_hmhf.config import LOG_FORMAT, get_settings  # noqa: E402
from radial_hmhf.experiments import (  # noqa: E402
    ExperimentConfig,
    TraceKind,
    run_space_convergence,
    run_time_convergence,
    run_trace_experiment,
)
from radial_hmhf.grid import StateVector, make_grid, make_time_grid  # noqa: E402
from radial_hmhf.linsolve import dense_solve, thomas_solve_values  # noqa: E402
from radial_hmhf.operators import TridiagonalOperator  # noqa: E402
from radial_hmhf.reference_cache import ReferenceCache  # noqa: E402
from radial_hmhf.stepper import Scheme, SchemeConfig, evolve, is_nonincreasing, max_norm_monitor  # noqa: E402
from radial_hmhf.verify import run_suite  # noqa: E402

logger = logging.getLogger(__name__)


@dataclass
class EvaluationResult:
    """Result of a single acceptance case."""
    case_name: str
    criterion: int
    success: bool
    measured: Dict[str, Any]
    expected: Dict[str, Any]
    execution_time: float
    error_message: Optional[str] = None
    failures: List[str] = field(default_factory=list)


def _within(value: float, target: float, rel_tol: float) -> bool:
    return abs(value - target) <= rel_tol * abs(target)


def _in_range(value: Optional[float], bounds: Sequence[float]) -> bool:
    return value is not None and bounds[0] <= value <= bounds[1]


class AcceptanceEvaluator:
    """Runs acceptance cases against the solver."""

    def __init__(self, evalset_path: str = "evaluation/acceptance_set.json", cache_dir: Optional[str] = None):
        self.evalset_path = evalset_path
        self.evalset = self._load_evalset()
        self.cache = ReferenceCache(cache_dir or get_settings().cache_dir)
        self.results: List[EvaluationResult] = []
        self._trace_reports: Dict[Tuple, Any] = {}
        self.handlers: Dict[str, Callable[[Dict[str, Any], Dict[str, Any]], Tuple[Dict[str, Any], List[str]]]] = {
            "time_convergence": self._time_convergence,
            "space_convergence": self._space_convergence,
            "max_norm_stability": self._max_norm_stability,
            "weighted_decay": self._weighted_decay,
            "energy_dissipation": self._energy_dissipation,
            "lemma_suite": self._lemma_suite,
            "blowup": self._blowup,
            "solver_oracle": self._solver_oracle,
        }

    def _load_evalset(self) -> Dict[str, Any]:
        try:
            with open(self.evalset_path, "r") as f:
                return json.load(f)
        except FileNotFoundError:
            raise FileNotFoundError(f"Evaluation set not found: {self.evalset_path}")
        except json.JSONDecodeError as e:
            raise ValueError(f"Invalid JSON in evaluation set: {e}")

    # ===== CASE HANDLERS =====

    def _time_convergence(self, params, expected):
        config = ExperimentConfig(ic=params["ic"], final_time=params["T"], n=params["N"], dt=params["dts"][0])
        config.reference = config.reference_descriptor(dt=params.get("reference_dt"))
        table = run_time_convergence(config, params["dts"], cache=self.cache)
        failures = [
            f"dt={row.param:g}: error {row.error:.4e} vs {target:.4e}"
            for row, target in zip(table.rows, expected["errors"])
            if not _within(row.error, target, expected["rel_tol"])
        ]
        failures += [f"EOC {o:.3f} outside {expected['eoc_range']}" for o in table.orders
                     if not _in_range(o, expected["eoc_range"])]
        return {"errors": table.errors, "eoc": table.orders}, failures

    def _space_convergence(self, params, expected):
        config = ExperimentConfig(ic=params["ic"], final_time=params["T"], n=params["ns"][0], dt=params["dt"])
        table = run_space_convergence(config, params["ns"], reference_n=params["reference_N"], cache=self.cache)
        failures = [
            f"h={row.param:g}: error {row.error:.4e} vs {target:.4e}"
            for row, target in zip(table.rows, expected["errors"])
            if not _within(row.error, target, expected["rel_tol"])
        ]
        orders = table.orders
        failures += [f"EOC {o:.3f} outside {expected['eoc_range']}" for o in orders[:-1]
                     if not _in_range(o, expected["eoc_range"])]
        if orders and not _in_range(orders[-1], expected["last_eoc_range"]):
            failures.append(f"last EOC {orders[-1]:.3f} outside {expected['last_eoc_range']}")
        return {"errors": table.errors, "eoc": orders}, failures

    def _max_norm_stability(self, params, expected):
        rng = np.random.default_rng(params["seed"])
        failures = []
        runs = 0
        for n in params["ns"]:
            grid = make_grid(n)
            for dt in params["dts"]:
                config = SchemeConfig(Scheme.EULER_SI, make_time_grid(dt * params["steps"], params["steps"]))
                for _ in range(params["samples"]):
                    u0 = StateVector(rng.uniform(-params["bound"], params["bound"], n), grid)
                    norms: List[float] = []
                    evolve(u0, config, grid, monitors=[max_norm_monitor(norms)])
                    runs += 1
                    if not is_nonincreasing(norms, ulps=expected["ulps"]):
                        failures.append(f"max norm increased for N={n}, dt={dt:g}")
        return {"runs": runs}, failures

    def _trace(self, params, kind: TraceKind, alpha: Optional[float] = None):
        key = (kind, params["ic"], params["N"], params["dt"], params["T"], alpha)
        if key not in self._trace_reports:
            config = ExperimentConfig(ic=params["ic"], final_time=params["T"], n=params["N"], dt=params["dt"])
            self._trace_reports[key] = run_trace_experiment(config, kind, alpha=alpha)
        return self._trace_reports[key]

    def _weighted_decay(self, params, expected):
        report = self._trace(params, TraceKind.WEIGHTED_NORM, params["alpha"])
        measured = {"nonincreasing": report.summary["nonincreasing"], "records": len(report.rows)}
        failures = [] if measured["nonincreasing"] == expected["nonincreasing"] else ["weighted norm increased"]
        if report.diverged:
            failures.append(f"diverged: {report.divergence_reason}")
        return measured, failures

    def _energy_dissipation(self, params, expected):
        report = self._trace(params, TraceKind.ENERGY, params["alpha"])
        measured = {k: report.summary.get(k) for k in ("violations", "within_step_limit", "step_limit", "d_alpha")}
        failures = []
        if measured["violations"] != expected["violations"]:
            failures.append(f"{measured['violations']} energy increases")
        if measured["within_step_limit"] != expected["within_step_limit"]:
            failures.append(f"dt above dissipation limit {measured['step_limit']}")
        return measured, failures

    def _lemma_suite(self, params, expected):
        reports = run_suite(params["suites"], params["seed"])
        failed = [f"{r.name} {r.params}: violation {r.violation:.3e}" for r in reports if not r.passed]
        return {"checks": len(reports), "failed": len(failed)}, failed

    def _blowup(self, params, expected):
        energy = self._trace(params, TraceKind.ENERGY)
        blowup = self._trace(params, TraceKind.BLOWUP)
        steepest = blowup.summary.get("steepest_rise_time")
        onset = blowup.summary.get("rise_onset_time")
        measured = {
            "completed": not blowup.diverged,
            "energy_nonincreasing": energy.summary["nonincreasing"],
            "weighted_nondecreasing": blowup.summary["nondecreasing"],
            "triggered": blowup.summary["triggered"],
            "growth_ratio": blowup.summary["growth_ratio"],
            "steepest_rise_time": steepest,
            "rise_onset_time": onset,
        }
        failures = [name for name in ("completed", "energy_nonincreasing", "weighted_nondecreasing", "triggered")
                    if not measured[name]]
        if not _in_range(steepest, expected["steepest_rise_range"]):
            failures.append(f"steepest rise at {steepest} outside {expected['steepest_rise_range']}")
        max_onset = expected.get("max_onset_fraction", 1.0) * params["T"]
        if onset is None or onset > max_onset:
            failures.append(f"rise onset at {onset} later than {max_onset:g}")
        return measured, failures

    def _solver_oracle(self, params, expected):
        rng = np.random.default_rng(params["seed"])
        worst = 0.0
        failures = []
        for k in range(params["systems"]):
            n = int(rng.integers(1, params["max_N"] + 1))
            sub = rng.uniform(-1.0, 1.0, n - 1)
            sup = rng.uniform(-1.0, 1.0, n - 1)
            off = np.zeros(n)
            off[:-1] += np.abs(sup)
            off[1:] += np.abs(sub)
            main = (off + rng.uniform(0.1, 1.0, n)) * rng.choice([-1.0, 1.0], n)
            T = TridiagonalOperator(sub=sub, main=main, sup=sup, grid=make_grid(n))
            rhs = rng.standard_normal(n)
            x = thomas_solve_values(T, rhs)
            reference = dense_solve(T, rhs)
            rel = float(np.max(np.abs(x - reference)) / max(np.max(np.abs(reference)), 1e-300))
            worst = max(worst, rel)
            if rel > expected["rel_tol"]:
                failures.append(f"system {k} (N={n}): relative error {rel:.3e}")
        return {"systems": params["systems"], "worst_relative_error": worst}, failures

    # ===== RUNNER =====

    async def _run_single_case(self, case: Dict[str, Any]) -> EvaluationResult:
        case_name = case["name"]
        logger.info(f"Running case: {case_name} (criterion {case['criterion']})")
        start_time = time.time()
        try:
            handler = self.handlers[case["kind"]]
            measured, failures = await asyncio.to_thread(handler, case["params"], case["expected"])
            return EvaluationResult(
                case_name=case_name,
                criterion=case["criterion"],
                success=not failures,
                measured=measured,
                expected=case["expected"],
                execution_time=time.time() - start_time,
                failures=failures,
            )
        except Exception as e:
            logger.error(f"Error in case {case_name}: {e}")
            return EvaluationResult(
                case_name=case_name,
                criterion=case.get("criterion", 0),
                success=False,
                measured={},
                expected=case.get("expected", {}),
                execution_time=time.time() - start_time,
                error_message=str(e),
            )

    async def run_evaluation(self, criteria: Optional[Sequence[int]] = None) -> List[EvaluationResult]:
        cases = [c for c in self.evalset["eval_cases"] if criteria is None or c["criterion"] in criteria]
        logger.info(f"Starting acceptance evaluation with {len(cases)} cases")
        self.results = []
        for case in cases:
            result = await self._run_single_case(case)
            self.results.append(result)
            status = "✅ PASS" if result.success else "❌ FAIL"
            logger.info(f"{status} {result.case_name} ({result.execution_time:.1f}s)")
        return self.results

    def generate_report(self, output_path: str = "evaluation/acceptance_report.json") -> Optional[Dict[str, Any]]:
        if not self.results:
            logger.warning("No results to report")
            return None

        total_cases = len(self.results)
        successful_cases = sum(1 for r in self.results if r.success)
        report = {
            "eval_set_info": {
                "eval_set_id": self.evalset.get("eval_set_id"),
                "eval_set_name": self.evalset.get("eval_set_name"),
                "description": self.evalset.get("description"),
                "version": self.evalset.get("version"),
            },
            "summary": {
                "total_cases": total_cases,
                "successful_cases": successful_cases,
                "failed_cases": total_cases - successful_cases,
                "success_rate": successful_cases / total_cases,
                "total_execution_time": sum(r.execution_time for r in self.results),
            },
            "results": [
                {
                    "case_name": r.case_name,
                    "criterion": r.criterion,
                    "success": r.success,
                    "measured": r.measured,
                    "expected": r.expected,
                    "failures": r.failures,
                    "execution_time": r.execution_time,
                    "error_message": r.error_message,
                }
                for r in self.results
            ],
        }
        Path(output_path).parent.mkdir(parents=True, exist_ok=True)
        with open(output_path, "w") as f:
            json.dump(report, f, indent=2, default=_json_default)
        logger.info(f"Acceptance report saved to: {output_path}")
        self._print_summary(report["summary"])
        return report

    def _print_summary(self, summary: Dict[str, Any]):
        print("\n" + "=" * 60)
        print("📊 ACCEPTANCE SUMMARY")
        print("=" * 60)
        for r in self.results:
            status = "✅ PASS" if r.success else "❌ FAIL"
            print(f"{status} [{r.criterion}] {r.case_name} ({r.execution_time:.1f}s)")
            for failure in r.failures:
                print(f"    - {failure}")
            if r.error_message:
                print(f"    - error: {r.error_message}")
        print("-" * 60)
        print(f"Total Cases: {summary['total_cases']}")
        print(f"Successful: {summary['successful_cases']}")
        print(f"Failed: {summary['failed_cases']}")
        print(f"Success Rate: {summary['success_rate']:.1%}")
        print(f"Total Execution Time: {summary['total_execution_time']:.1f}s")
        print("=" * 60)


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return str(value)


def parse_cases(text: Optional[str]) -> Optional[List[int]]:
    if not text:
        return None
    return [int(item) for item in text.split(",") if item.strip()]


async def main(argv: Optional[List[str]] = None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="Run the radial HMHF acceptance cases")
    parser.add_argument("--evalset", type=str, default="evaluation/acceptance_set.json",
                        help="Path to acceptance case JSON file")
    parser.add_argument("--report", type=str, default="evaluation/acceptance_report.json",
                        help="Path to save the JSON report")
    parser.add_argument("--cases", type=str, default=None, help="Comma-separated criterion numbers, e.g. 1,3,6")
    parser.add_argument("--cache-dir", type=str, default=None, help="Reference cache directory")
    parser.add_argument("--verbose", action="store_true", help="Enable verbose logging")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    logging.getLogger("numba").setLevel(logging.WARNING)

    try:
        evaluator = AcceptanceEvaluator(args.evalset, cache_dir=args.cache_dir)
        results = await evaluator.run_evaluation(parse_cases(args.cases))
        evaluator.generate_report(args.report)
    except Exception as e:
        logger.error(f"Evaluation failed: {e}")
        return 1

    failed = sum(1 for r in results if not r.success)
    print(f"\n{'✅' if not failed else '❌'} Acceptance run completed: {len(results) - failed}/{len(results)} passed.")
    return 0 if not failed else 1


if __name__ == "__main__":
    sys.exit(asyncio.run(main()))
