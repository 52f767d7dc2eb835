"""Command-line entry point: ``wncs run | sweep | optimize``.

Exit codes: 0 success, 2 invalid input, 3 the joint problem had no
feasible solution (and ``--allow-infeasible`` was not given).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import Scenario, default_scenario, load_scenario
from .exceptions import ConfigError, InfeasibleCandidateError
from .optimizer import Candidate
from .simulator import (SWEEPABLE, SweepSpec, optimizer_rng, run_monte_carlo, run_sweep,
                        solve_initial)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3

log = logging.getLogger("wncs")


class _InvalidInput(Exception):
    pass


def _scenario(args):
    if args.config is None:
        return default_scenario()
    return Scenario(*load_scenario(args.config))


def _seed(args, scenario):
    return scenario.params.seed if args.seed is None else args.seed


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _parse_values(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise _InvalidInput(f"--values must be comma-separated numbers, got {text!r}") from None
    if not values:
        raise _InvalidInput("--values is empty")
    return values


def _load_candidate(path):
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise _InvalidInput(f"cannot read candidate {path}: {exc}") from exc
    if isinstance(raw, dict) and "best" in raw:
        raw = raw["best"]
    try:
        return Candidate.from_dict(raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise _InvalidInput(f"{path}: not a candidate ({exc})") from exc


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n")


def cmd_optimize(args):
    scenario = _scenario(args)
    report = solve_initial(scenario, optimizer_rng(_seed(args, scenario)))
    out = report.to_dict()
    if args.out:
        _write_json(args.out, out)
    else:
        print(json.dumps(out, indent=2))
    log.info("optimize: feasible=%s J=%s after %d generations",
             report.feasible, out["j_best"], report.iterations)
    return EXIT_OK if report.feasible else EXIT_INFEASIBLE


def cmd_run(args):
    scenario = _scenario(args)
    seed = _seed(args, scenario)
    trials = args.trials or scenario.params.trials
    summary = {"seed": seed, "steps": args.steps, "trials": trials}
    if args.candidate:
        cand = _load_candidate(args.candidate)
    else:
        report = solve_initial(scenario, optimizer_rng(seed))
        summary["optimization"] = report.to_dict()
        cand = report.best
        if not report.feasible and not args.allow_infeasible:
            _write_json(Path(args.out) / "summary.json", summary)
            log.error("no feasible candidate found; use --allow-infeasible to simulate anyway")
            return EXIT_INFEASIBLE
    try:
        result = run_monte_carlo(scenario, cand, args.steps, trials, seed,
                                 allow_infeasible=args.allow_infeasible)
    except InfeasibleCandidateError as exc:
        log.error("%s", exc)
        return EXIT_INFEASIBLE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.write_csv(out / "run.csv")
    summary.update(candidate=cand.to_dict(), **result.final())
    _write_json(out / "summary.json", summary)
    log.info("run: wrote %s", out / "run.csv")
    return EXIT_OK


def cmd_sweep(args):
    scenario = _scenario(args)
    values = _parse_values(args.values)
    if args.param == "r":
        values = [int(v) if float(v).is_integer() else v for v in values]
    cand = _load_candidate(args.candidate) if args.candidate else None
    try:
        spec = SweepSpec(args.param, tuple(values), scenario, cand)
    except ValueError as exc:
        raise _InvalidInput(str(exc)) from exc
    trials = args.trials or scenario.params.trials
    summary = run_sweep(spec, args.out, steps=args.steps, trials=trials,
                        seed=_seed(args, scenario), allow_infeasible=args.allow_infeasible)
    statuses = [entry["status"] for entry in summary["results"]]
    log.info("sweep: %s", ", ".join(f"{e['value']}={e['status']}" for e in summary["results"]))
    if "infeasible" in statuses:
        return EXIT_INFEASIBLE
    if "error" in statuses:
        return EXIT_INVALID
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="wncs", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="scenario JSON (default: built-in reference scenario)")
        p.add_argument("--seed", type=int, help="master seed (default: scenario seed)")

    p_opt = sub.add_parser("optimize", help="solve the joint gain/bandwidth problem once")
    common(p_opt)
    p_opt.add_argument("--out", help="report JSON path (default: stdout)")
    p_opt.set_defaults(func=cmd_optimize)

    def simulation(p):
        common(p)
        p.add_argument("--steps", type=_positive_int, default=1000)
        p.add_argument("--trials", type=_positive_int, help="default: scenario trials")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--candidate", help="candidate or optimize-report JSON to use instead of solving")
        p.add_argument("--allow-infeasible", action="store_true",
                       help="simulate even when the candidate violates the constraints")

    p_run = sub.add_parser("run", help="Monte-Carlo simulation of one scenario")
    simulation(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="repeat the simulation over one parameter")
    simulation(p_sweep)
    p_sweep.add_argument("--param", required=True, choices=SWEEPABLE)
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, _InvalidInput) as exc:
        print(f"wncs: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
