"""Command-line front end.

Subcommands: ``run``, ``compare``, ``opf``, ``validate``, ``fixtures``.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, NumericalError
from .network import validate_channels
from .ofo import Theta
from .oracle import solve_acopf
from .scenario import Scenario, load_scenario
from .sim import SimulationError, TraceWriter, compare, metrics, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
FIXTURES = ("two_bus.json", "feeder15.json", "reference.json", "step_event.json",
            "overvoltage_ramp.json", "pf_ramp.json", "ekf_constant.json", "slow_ramp.json")

log = logging.getLogger("gridofo")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {value}")
    return value


def _nonneg_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected an integer >= 0, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridofo", description="Closed-loop feedback optimization of distribution grid inputs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_args(p, controller=True):
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        if controller:
            p.add_argument("--controller", choices=("qp", "pg", "open_loop"), default=None)
        p.add_argument("--inner-steps", type=_positive_int, default=None, dest="inner_steps")
        p.add_argument("--horizon", type=_positive_int, default=None)
        p.add_argument("--oracle-every", type=_nonneg_int, default=None, dest="oracle_every")
        p.add_argument("--exact-pf-in-loop", action="store_true", default=None, dest="exact_pf_in_loop")

    scenario_args(sub.add_parser("run", help="run one closed-loop scenario"))
    scenario_args(sub.add_parser("compare", help="paired QP vs PG runs"), controller=False)
    p_opf = sub.add_parser("opf", help="solve the frozen AC-OPF at one step of a scenario")
    p_opf.add_argument("--scenario", required=True)
    p_opf.add_argument("--step", type=_nonneg_int, default=0)
    p_opf.add_argument("--starts", type=_nonneg_int, default=0, help="extra random warm starts")
    p_opf.add_argument("--out", default=None)
    p_val = sub.add_parser("validate", help="check fixture invariants")
    p_val.add_argument("--scenario", required=True)
    p_fix = sub.add_parser("fixtures", help="list or copy the bundled fixtures")
    p_fix.add_argument("--out", default=None, help="copy the fixtures into this directory")
    return parser


def _overrides(args) -> dict:
    keys = ("seed", "controller", "inner_steps", "horizon", "oracle_every", "exact_pf_in_loop")
    return {k: getattr(args, k, None) for k in keys if getattr(args, k, None) is not None}


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def run_to_files(sc: Scenario, out: Path, stem: str = "trace") -> dict:
    """Run ``sc`` streaming ``<stem>.csv`` into ``out``; returns the summary."""
    with open(out / f"{stem}.csv", "w", newline="") as fh:
        trace = run_scenario(sc, writer=TraceWriter(fh, sc))
    return metrics(trace)


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario, **_overrides(args))
    out = _out_dir(args, "out")
    summary = run_to_files(sc, out)
    _dump_json(out / "summary.json", summary)
    print(
        f"{sc.name}: controller={summary['controller']} horizon={summary['horizon']} "
        f"final_err={summary['tracking_error_final']} max_violation={summary['max_violation']:.3e} "
        f"steps_to_1e-3={summary['steps_to_1e-03']}"
    )
    return EXIT_OK


def cmd_compare(args) -> int:
    overrides = _overrides(args)
    # both variants are built (and validated) before either run starts
    base = load_scenario(args.scenario, **overrides)
    scenarios = {c: base.with_overrides(controller=c) for c in ("qp", "pg")}
    out = _out_dir(args, "out")

    def job(name):
        sc = scenarios[name]
        with open(out / f"trace_{name}.csv", "w", newline="") as fh:
            return run_scenario(sc, writer=TraceWriter(fh, sc))

    with ThreadPoolExecutor(max_workers=2) as pool:
        futures = {name: pool.submit(job, name) for name in scenarios}
        traces = {name: fut.result() for name, fut in futures.items()}
    result = compare(traces["qp"], traces["pg"])
    _dump_json(out / "comparison.json", result)
    ratio = result["ratios"]["steps_to_1e-03"]
    print(
        f"{base.name}: qp steps_to_1e-3={result['qp']['steps_to_1e-03']} "
        f"pg steps_to_1e-3={result['pg']['steps_to_1e-03']} ratio={ratio}"
        + (f" ({result['reason']})" if result["reason"] else "")
    )
    return EXIT_OK


def cmd_opf(args) -> int:
    sc = load_scenario(args.scenario)
    if args.step >= sc.horizon:
        raise ConfigError(f"step {args.step} is beyond the horizon {sc.horizon}")
    t = args.step
    theta = Theta(sc.d_profile[t], sc.lo_profile[t], sc.hi_profile[t])
    sol = solve_acopf(sc.model, theta, sc.cfg, eta=sc.oracle_eta, starts=args.starts, seed=sc.seed)
    report = {
        "scenario": sc.name,
        "step": t,
        "u_star": {ch.name: float(v) for ch, v in zip(sc.model.inputs, sol.u_star)},
        "f_star": sol.f_star,
        "kkt_residual": sol.kkt_residual,
        "active_set": sol.active_set,
        "iterations": sol.iterations,
    }
    if args.out:
        _dump_json(_out_dir(args, args.out) / "opf.json", report)
    print(json.dumps(report, indent=2, default=_json_default))
    return EXIT_OK


def cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    validate_channels(sc.model)
    m = sc.model
    print(f"{sc.name}: {m.n_buses} buses, {len(m.lines)} lines, {m.n_u} inputs, "
          f"{m.n_d} disturbances, horizon {sc.horizon}")
    for check in ("connectivity", "channel completeness", "bound ordering", "profile length"):
        print(f"  {check}: ok")
    print("OK")
    return EXIT_OK


def cmd_fixtures(args) -> int:
    from . import data_path

    if args.out:
        out = _out_dir(args, args.out)
        for name in FIXTURES:
            with data_path(name).open("rb") as src, open(out / name, "wb") as dst:
                shutil.copyfileobj(src, dst)
        print(f"copied {len(FIXTURES)} fixtures to {out}")
    else:
        for name in FIXTURES:
            print(data_path(name))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "opf": cmd_opf,
            "validate": cmd_validate, "fixtures": cmd_fixtures}


def _configure_logging() -> None:
    level = os.environ.get("GRIDOFO_LOG", "warn").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if level not in LOG_LEVELS:
        log.warning("unknown GRIDOFO_LOG=%r, using 'warn'", level)


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"numerical failure at step {exc.step}: {exc.cause}", file=sys.stderr)
        print(json.dumps(exc.state, default=_json_default), file=sys.stderr)
        return EXIT_NUMERIC
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
