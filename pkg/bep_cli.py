"""
bep: command-line front end for the bilevel equilibrium toolkit.

    python bep_cli.py solve      --config configs/saddle_example.json --out out/
    python bep_cli.py dynamics   --config configs/saddle_paired.json --out out/
    python bep_cli.py check      --config configs/saddle_example.json --out out/
    python bep_cli.py oracle     --config configs/prox_selection.json --out out/
    python bep_cli.py properties --seed 0 --samples 100000 --out out/
    python bep_cli.py runs       --store sqlite:///runs.db

Exit codes: 0 converged / passed, 1 usage or config error, 2 not converged
(or a failed suite, or no grid solution), 3 numeric failure.
"""
import argparse
import logging
import sys
from typing import List, Optional

import numpy as np

from app import crud
from app.config import (RunConfig, build_problem, build_schedule, build_schedule_fn,
                        build_stopping_rule, load_config)
from app.db import configure, get_db, init_db
from app.errors import (ConvergenceError, EmptySolutionSetError, NumericalError,
                        UsageError)
from app.services_dynamics import integrate
from app.services_export import export_run, to_jsonable, write_json
from app.services_fbf import run_fbf
from app.services_oracle import bep_grid_stages, stage_tolerances
from app.services_properties import run_all
from app.services_report import check_report, dynamics_summary, gather_report, solve_summary
from app.services_saddle import saddle_points_grid

logger = logging.getLogger("bep")

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED, EXIT_NUMERIC = 0, 1, 2, 3
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
LISTED_POINTS = 1000


class _Parser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bep", description="Forward-backward-forward solvers for bilevel equilibrium problems.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--format", choices=["csv", "json"], default=None, help="trace file format")
        p.add_argument("--store", default=None, help="SQLAlchemy URL of the run store (default: in-memory)")
        p.add_argument("--log-level", default="WARNING",
                       choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="stderr log level")
        return p

    common(sub.add_parser("solve", help="run the discrete iteration"))
    common(sub.add_parser("dynamics", help="integrate the continuous dynamics"))
    common(sub.add_parser("check", help="report the convergence hypotheses for a schedule"))
    common(sub.add_parser("oracle", help="brute-force grid solution of the bilevel problem"))
    props = common(sub.add_parser("properties", help="run the seeded property suites"), needs_config=False)
    props.add_argument("--samples", type=int, default=100_000)
    common(sub.add_parser("runs", help="list runs in the store"), needs_config=False)
    return parser


def _seed(args, cfg: Optional[RunConfig] = None) -> int:
    if args.seed is not None:
        if args.seed < 0:
            raise UsageError(f"--seed must be non-negative, got {args.seed}")
        return args.seed
    return cfg.seed if cfg is not None else 0


def _fmt(args, cfg: RunConfig) -> str:
    return args.format or cfg.output.format


def _reference(cfg: RunConfig):
    return None if cfg.solver.reference is None else np.array(cfg.solver.reference, dtype=float)


# ── Commands ─────────────────────────────────────────────────────────────────

def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    inst, _ = build_problem(cfg)
    trace = run_fbf(inst, cfg.solver.x0, build_schedule(cfg), build_stopping_rule(cfg), _reference(cfg))
    summary = solve_summary(trace)
    with get_db() as db:
        run = crud.create_run(db, cfg.name, "solve", cfg.digest, _seed(args, cfg))
        crud.record_iterations(db, run.id, trace)
        crud.finish_run(db, run, to_jsonable(summary), trace.converged, trace.iterations)
        export_run(db, run.id, args.out, _fmt(args, cfg))
    print(f"{cfg.name}: {'converged' if trace.converged else 'not converged'} after "
          f"{trace.iterations} iterations, final point {trace.final_point.tolist()}")
    return EXIT_OK if trace.converged else EXIT_NOT_CONVERGED


def cmd_dynamics(args) -> int:
    cfg = load_config(args.config)
    inst, _ = build_problem(cfg)
    s = cfg.solver
    trace = integrate(inst, s.x0, build_schedule_fn(cfg, inst.lipschitz), method=s.method,
                      step=s.step, t_end=s.t_end, reference=_reference(cfg))
    summary = dynamics_summary(trace)
    with get_db() as db:
        run = crud.create_run(db, cfg.name, "dynamics", cfg.digest, _seed(args, cfg))
        crud.record_trajectory(db, run.id, trace)
        crud.finish_run(db, run, to_jsonable(summary), not trace.truncated, trace.samples)
        export_run(db, run.id, args.out, _fmt(args, cfg))
    print(f"{cfg.name}: {trace.samples} samples to t={summary['t_final']:g}"
          + (f" (truncated: {trace.message})" if trace.truncated else ""))
    return EXIT_NUMERIC if trace.truncated else EXIT_OK


def cmd_check(args) -> int:
    cfg = load_config(args.config)
    inst, saddle = build_problem(cfg)
    report = check_report(inst, build_schedule(cfg), build_schedule_fn(cfg, inst.lipschitz),
                          cfg.solver.horizon, cfg.solver.t_end, _reference(cfg), saddle,
                          cfg.check.p, cfg.check.q, cfg.check.relative)
    with get_db() as db:
        run = crud.create_run(db, cfg.name, "check", cfg.digest, _seed(args, cfg))
        crud.record_checks(db, run.id, report["flags"], report["witnesses"])
        crud.finish_run(db, run, to_jsonable(report))
        export_run(db, run.id, args.out)
    for name, passed in report["flags"].items():
        print(f"{name}: {'pass' if passed else 'FAIL'}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = load_config(args.config)
    inst, saddle = build_problem(cfg)
    s = cfg.solver
    lower_tol, upper_tol = stage_tolerances(inst, s.oracle_tol)
    lower, sols = bep_grid_stages(inst, s.grid, s.oracle_tol)
    report = {
        "grid": s.grid,
        "tol_lower": lower_tol,
        "tol_upper": upper_tol,
        "spacing": inst.k.spacing(s.grid),
        "lower_count": len(lower),
        "lower_solutions": [p.tolist() for p in lower[:LISTED_POINTS]],
        "lower_listed_all": len(lower) <= LISTED_POINTS,
        "bep_count": len(sols),
        "bep_solutions": [p.tolist() for p in sols[:LISTED_POINTS]],
    }
    if saddle is not None:
        saddles = saddle_points_grid(saddle, s.grid, lower_tol)
        report["saddle_points_match"] = (len(saddles) == len(lower)
                                         and all(np.array_equal(a, b) for a, b in zip(saddles, lower)))
    with get_db() as db:
        run = crud.create_run(db, cfg.name, "oracle", cfg.digest, _seed(args, cfg))
        crud.finish_run(db, run, to_jsonable(report), bool(sols), len(sols))
        export_run(db, run.id, args.out)
    print(f"{cfg.name}: |S_f| = {len(lower)}, {len(sols)} grid solution(s)")
    return EXIT_OK if sols else EXIT_NOT_CONVERGED


def cmd_properties(args) -> int:
    seed = _seed(args)
    report = run_all(args.samples, seed)
    with get_db() as db:
        run = crud.create_run(db, "properties", "properties", None, seed)
        suites = report["suites"]
        crud.record_checks(db, run.id, {k: v["passed"] for k, v in suites.items()})
        crud.finish_run(db, run, to_jsonable(report), report["all_passed"], len(suites))
        export_run(db, run.id, args.out)
    for name, res in report["suites"].items():
        print(f"{name}: {'pass' if res['passed'] else 'FAIL'}")
    return EXIT_OK if report["all_passed"] else EXIT_NOT_CONVERGED


def cmd_runs(args) -> int:
    with get_db() as db:
        report = gather_report(db)
    write_json(f"{args.out}/runs.json", report)
    for r in report["runs"]:
        print(f"{r['id']:>4}  {r['kind']:<10} {r['name']:<24} converged={r['converged']} "
              f"iterations={r['iterations']}")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "dynamics": cmd_dynamics,
    "check": cmd_check,
    "oracle": cmd_oracle,
    "properties": cmd_properties,
    "runs": cmd_runs,
}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"bep: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT,
                        stream=sys.stderr, force=True)
    try:
        configure(args.store)
        init_db()
        return COMMANDS[args.command](args)
    except UsageError as exc:
        logger.error("%s", exc)
        print(f"bep: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EmptySolutionSetError as exc:
        print(f"bep: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (NumericalError, ConvergenceError) as exc:
        logger.error("numeric failure: %s", exc)
        print(f"bep: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
