"""
Command-line front end.

    python -m radial_hmhf run --ic smooth --N 999 --dt 1e-6 --T 0.1 --out sol.csv
    python -m radial_hmhf convergence --mode time --out table1.csv
    python -m radial_hmhf verify --suite all
    python -m radial_hmhf trace --kind energy --out energy.csv
    python -m radial_hmhf history --limit 10

Every flag may also come from `--config FILE` (`key = value` lines); flags
win over the file, the file wins over built-in defaults.
Exit codes: 0 success, 1 usage/config error, 2 divergence, 3 I/O failure.
"""

import argparse
import json
import logging
import sys
from typing import Any, Callable, Dict, List, Optional, Tuple

from . import commands
from .config import Settings, configure_logging, get_settings, load_config_file, normalize_key
from .errors import UsageError
from .experiments import STUDY_FINAL_TIME, TIME_STUDY_N, InitialCondition
from .reference_cache import DEFAULT_VALIDATION_TOL
from .run_ledger import RunLedger, get_run_ledger
from .stepper import Scheme
from .verify import DEFAULT_SEED, SUITES

logger = logging.getLogger(__name__)

_REQUIRED = object()


class HMHFArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise ValueError(f"expected a positive integer, got {text}")
    return value


def _float_list(values) -> List[float]:
    return [float(v) for v in (values if isinstance(values, list) else [values])]


def _int_list(values) -> List[int]:
    return [_positive_int(str(v)) for v in (values if isinstance(values, list) else [values])]


def _flag(value: str) -> bool:
    if isinstance(value, bool):
        return value
    lowered = str(value).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected true/false, got {value!r}")


def _str_list(values) -> List[str]:
    if isinstance(values, list):
        return [str(v) for v in values]
    return [item.strip() for item in str(values).split(",") if item.strip()]


# key -> (converter, default); _REQUIRED marks keys with no default
Resolution = Dict[str, Tuple[Callable[[Any], Any], Any]]

_EVOLUTION_KEYS: Resolution = {
    "ic": (str, InitialCondition.SMOOTH.value),
    "N": (_positive_int, TIME_STUDY_N),
    "dt": (float, 1e-6),
    "T": (float, STUDY_FINAL_TIME),
    "scheme": (str, Scheme.EULER_SI.value),
    "amplitude": (float, None),
    "stride": (_positive_int, None),
    "out": (str, _REQUIRED),
    "force": (_flag, False),
    "seed": (int, None),
}

RESOLUTION: Dict[str, Resolution] = {
    "run": dict(_EVOLUTION_KEYS),
    "trace": {
        **_EVOLUTION_KEYS,
        "kind": (str, _REQUIRED),
        "alpha": (float, None),
    },
    "convergence": {
        "mode": (str, _REQUIRED),
        "ic": (str, InitialCondition.SMOOTH.value),
        "N": (_int_list, None),
        "dt": (_float_list, None),
        "T": (float, STUDY_FINAL_TIME),
        "scheme": (str, Scheme.EULER_SI.value),
        "amplitude": (float, None),
        "ref_N": (_positive_int, None),
        "ref_dt": (float, None),
        "validation_tol": (float, DEFAULT_VALIDATION_TOL),
        "ref_cache": (str, None),
        "jobs": (_positive_int, 1),
        "out": (str, None),
        "force": (_flag, False),
        "seed": (int, None),
    },
    "verify": {
        "suite": (_str_list, ["all"]),
        "seed": (int, DEFAULT_SEED),
        "N": (_positive_int, None),
        "delta": (float, None),
        "report": (str, None),
        "force": (_flag, False),
    },
    "history": {
        "limit": (_positive_int, 20),
        "command": (str, None),
    },
}


def _add_evolution_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ic", choices=[ic.value for ic in InitialCondition], default=None,
                   help="Initial condition preset; custom uses --amplitude A for A(1-x)x")
    p.add_argument("--amplitude", type=float, default=None)
    p.add_argument("--N", type=_positive_int, default=None, help="Number of interior nodes")
    p.add_argument("--dt", type=float, default=None, help="Time step")
    p.add_argument("--T", type=float, default=None, help="Final time")
    p.add_argument("--scheme", choices=[s.value for s in Scheme], default=None)
    p.add_argument("--stride", type=_positive_int, default=None, help="Record every k-th step")
    p.add_argument("--out", default=None, help="Output CSV path")
    p.add_argument("--seed", type=int, default=None, help="Recorded with the run; the evolution itself is deterministic")
    p.add_argument("--force", action="store_true", default=None, help="Overwrite existing outputs")


def build_parser() -> HMHFArgumentParser:
    parser = HMHFArgumentParser(
        prog="radial_hmhf",
        description="Semi-implicit solver for radially symmetric harmonic map heat flow",
    )
    parser.add_argument("--config", default=None, help="key = value file supplying defaults for any flag")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one evolution and write the solution profile")
    _add_evolution_flags(run)

    conv = sub.add_parser("convergence", help="Temporal or spatial convergence study")
    conv.add_argument("--mode", choices=["time", "space"], default=None)
    conv.add_argument("--ic", choices=[ic.value for ic in InitialCondition], default=None)
    conv.add_argument("--amplitude", type=float, default=None)
    conv.add_argument("--N", type=_positive_int, action="append", default=None,
                      help="Grid size (time mode) or ladder entry (space mode, repeatable)")
    conv.add_argument("--dt", type=float, action="append", default=None,
                      help="Ladder entry (time mode, repeatable) or row step (space mode)")
    conv.add_argument("--T", type=float, default=None)
    conv.add_argument("--scheme", choices=[s.value for s in Scheme], default=None)
    conv.add_argument("--ref-N", dest="ref_N", type=_positive_int, default=None)
    conv.add_argument("--ref-dt", dest="ref_dt", type=float, default=None)
    conv.add_argument("--validation-tol", dest="validation_tol", type=float, default=None)
    conv.add_argument("--ref-cache", dest="ref_cache", default=None, help="Reference cache directory")
    conv.add_argument("--jobs", type=_positive_int, default=None, help="Parallel study rows")
    conv.add_argument("--out", default=None)
    conv.add_argument("--seed", type=int, default=None, help="Recorded with the run")
    conv.add_argument("--force", action="store_true", default=None)

    ver = sub.add_parser("verify", help="Run the stability check suites")
    ver.add_argument("--suite", action="append", default=None,
                     help=f"all or one of: {', '.join(SUITES)} (repeatable)")
    ver.add_argument("--seed", type=int, default=None)
    ver.add_argument("--N", type=_positive_int, default=None)
    ver.add_argument("--delta", type=float, default=None)
    ver.add_argument("--report", default=None, help="JSON report path")
    ver.add_argument("--force", action="store_true", default=None)

    trace = sub.add_parser("trace", help="Energy, weighted-norm or blow-up trace")
    trace.add_argument("--kind", choices=["energy", "weighted", "blowup"], default=None)
    trace.add_argument("--alpha", type=float, default=None, help="Weight exponent (default sqrt(2/pi))")
    _add_evolution_flags(trace)

    hist = sub.add_parser("history", help="Recent runs from the run ledger")
    hist.add_argument("--limit", type=_positive_int, default=None)
    hist.add_argument("--command", default=None)
    return parser


def resolve_options(command: str, args: argparse.Namespace, config_values: Dict[str, Any]) -> Dict[str, Any]:
    """Flag, then config file, then built-in default for every key of `command`."""
    options: Dict[str, Any] = {}
    for key, (convert, default) in RESOLUTION[command].items():
        value = getattr(args, key, None)
        if value is None and key in config_values:
            raw = config_values[key]
            if isinstance(raw, list) and convert not in (_float_list, _int_list, _str_list):
                if len(raw) != 1:
                    raise UsageError(f"{command}: config key {key!r} takes a single value, got {raw}")
                raw = raw[0]
            try:
                value = convert(raw)
            except (TypeError, ValueError) as e:
                raise UsageError(f"Config value for {key!r} is invalid: {e}") from e
        elif value is not None and convert in (_float_list, _int_list, _str_list):
            value = convert(value)
        if value is None:
            if default is _REQUIRED:
                raise UsageError(f"{command}: --{key.replace('_', '-')} is required")
            value = default
        options[key] = value
    return options


def _open_ledger(settings: Settings) -> Optional[RunLedger]:
    try:
        return get_run_ledger(settings.ledger_db)
    except Exception as e:
        logger.error(f"Run ledger unavailable at {settings.ledger_db}: {e}")
        return None


def _check_single_values(command: str, opts: Dict[str, Any]) -> None:
    if command != "convergence":
        return
    if opts["mode"] == "time" and len(opts["N"] or []) > 1:
        raise UsageError("--mode time takes a single --N; repeat --dt for the ladder")
    if opts["mode"] == "space" and len(opts["dt"] or []) > 1:
        raise UsageError("--mode space takes a single --dt; repeat --N for the ladder")


def dispatch(command: str, opts: Dict[str, Any], settings: Settings, ledger: Optional[RunLedger]) -> Dict[str, Any]:
    if command == "run":
        return commands.run_solution(
            ic=opts["ic"], n=opts["N"], dt=opts["dt"], final_time=opts["T"], out=opts["out"],
            scheme=opts["scheme"], amplitude=opts["amplitude"], stride=opts["stride"],
            force=opts["force"], seed=opts["seed"], ledger=ledger,
        )
    if command == "trace":
        return commands.trace_run(
            kind=opts["kind"], ic=opts["ic"], n=opts["N"], dt=opts["dt"], final_time=opts["T"],
            out=opts["out"], alpha=opts["alpha"], scheme=opts["scheme"], amplitude=opts["amplitude"],
            stride=opts["stride"], force=opts["force"], seed=opts["seed"], ledger=ledger,
        )
    if command == "convergence":
        ns = opts["N"] or []
        dts = opts["dt"] or []
        time_mode = opts["mode"] == "time"
        return commands.convergence_study(
            mode=opts["mode"], ic=opts["ic"], final_time=opts["T"],
            n=ns[0] if time_mode and ns else None,
            dts=dts if time_mode and dts else None,
            ns=ns if not time_mode and ns else None,
            dt=dts[0] if not time_mode and dts else None,
            amplitude=opts["amplitude"], scheme=opts["scheme"],
            reference_n=opts["ref_N"], reference_dt=opts["ref_dt"],
            validation_tol=opts["validation_tol"],
            ref_cache=opts["ref_cache"] or settings.cache_dir,
            jobs=opts["jobs"], out=opts["out"], force=opts["force"], seed=opts["seed"],
            ledger=ledger,
        )
    if command == "verify":
        return commands.verify_lemmas(
            suites=opts["suite"], seed=opts["seed"], n=opts["N"], delta=opts["delta"],
            report_path=opts["report"], force=opts["force"], ledger=ledger,
        )
    if command == "history":
        return commands.list_history(ledger, limit=opts["limit"], command=opts["command"])
    raise UsageError(f"Unknown command {command!r}")


def _print_result(command: str, result: Dict[str, Any]) -> None:
    if command == "verify" and "table" in result:
        print(result["table"])
    elif command == "convergence" and result.get("rows"):
        print(f"{'param':>12}  {'error_Dh':>16}  {'eoc':>6}")
        for row in result["rows"]:
            eoc = "" if row["eoc"] is None else f"{row['eoc']:.2f}"
            print(f"{row['param']:>12.4e}  {row['error_Dh']:>16.4e}  {eoc:>6}")
    elif command == "history" and result.get("success"):
        for run in result["runs"]:
            print(f"{run['started_at']}  {run['command']:<12} {run['status']:<9} exit={run['exit_code']}  "
                  f"{json.dumps(run['arguments'], sort_keys=True)}")
    status = "✅" if result.get("success") else "❌"
    stream = sys.stdout if result.get("success") else sys.stderr
    print(f"{status} {result.get('message', '')}", file=stream)


def main(argv: Optional[List[str]] = None) -> int:
    settings = get_settings()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config_values: Dict[str, Any] = {}
        if args.config:
            known = [normalize_key(k) for k in RESOLUTION[args.command]]
            config_values = load_config_file(args.config, known)
        opts = resolve_options(args.command, args, config_values)
        _check_single_values(args.command, opts)
    except UsageError as e:
        print(f"❌ {e}", file=sys.stderr)
        return commands.EXIT_USAGE

    configure_logging(settings, verbose=args.verbose)
    logger.info(f"radial_hmhf {args.command}: {opts}")
    result = dispatch(args.command, opts, settings, _open_ledger(settings))
    _print_result(args.command, result)
    return int(result.get("exit_code", commands.EXIT_USAGE))
