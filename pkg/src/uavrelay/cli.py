"""Command-line front end: ``planner solve|benchmark|sweep``.

Exit status is 0 on success, 2 when the scenario admits no feasible plan
(or the run ends infeasible), and 1 on usage errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import artifacts, baselines, immua
from .mobility import InfeasibleScenarioError
from .scenario import EPS_FEAS, Scenario, ScenarioError, causality_slack, load_scenario, rate_profile

log = logging.getLogger("uavrelay")

SWEEP_PARAMS = ("p_uav", "altitude", "a_max", "v_max")
SCALAR_FIELDS = ("altitude", "period", "num_slots", "v_max", "a_max", "p_gbs", "p_uav",
                 "ref_gain_db", "noise_dbm", "rate_floor")


class UsageError(Exception):
    pass


def _floats(text: str, flag: str) -> list:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated numbers, got {text!r}") from None
    if not values:
        raise UsageError(f"{flag} needs at least one value")
    return values


def with_scalar(scenario: Scenario, name: str, value: float) -> Scenario:
    if name not in SCALAR_FIELDS:
        raise UsageError(f"cannot override {name!r}; allowed: {', '.join(SCALAR_FIELDS)}")
    data = scenario.to_dict()
    data[name] = int(value) if name == "num_slots" else value
    return Scenario.from_dict(data)


def _load(args) -> Scenario:
    path = Path(args.scenario)
    if not path.is_file():
        raise UsageError(f"scenario file not found: {path}")
    try:
        scn = load_scenario(path)
        for item in args.set or []:
            name, _, raw = item.partition("=")
            if not raw:
                raise UsageError(f"--set expects name=value, got {item!r}")
            scn = with_scalar(scn, name.strip(), float(raw))
    except ScenarioError as exc:
        raise UsageError(f"invalid scenario {path}: {exc}") from None
    except ValueError as exc:
        raise UsageError(f"invalid scenario {path}: {exc}") from None
    return scn


def _feasible(result) -> bool:
    return all(v <= EPS_FEAS for v in result.violations.values())


def cmd_solve(args) -> int:
    scn = _load(args)
    if args.multi_start > 1:
        if args.seed is None:
            raise UsageError("--seed is required with --multi-start")
        result, objectives = baselines.multi_start(scn, None, args.multi_start, args.seed, args.workers)
        if result is None:
            raise InfeasibleScenarioError("no start produced a feasible run")
        extra = {"multi_start_objectives": [float(v) for v in objectives]}
    else:
        result = immua.run(scn)
        extra = {}
    out = artifacts.write_run(args.out, scn, result, extra)
    print(f"objective {result.objective:.9g} after {result.outer_iterations} outer iterations -> {out}")
    return 0 if result.converged and _feasible(result) else 2


def _comparison_row(scn, name, plan, assoc, objective):
    prof = rate_profile(scn, plan, assoc)
    slack = causality_slack(prof)
    return [name, objective, *prof.per_user, float(slack.min()) if slack.size else 0.0]


def cmd_benchmark(args) -> int:
    if args.seed is None:
        raise UsageError("--seed is required for benchmark (random association baseline)")
    scn = _load(args)
    radii = _floats(args.radii, "--radii") if args.radii is not None else [200.0, 500.0, 800.0]
    if any(r <= 0 for r in radii):
        raise UsageError("--radii must be positive")
    result = immua.run(scn)
    rows = [_comparison_row(scn, "immua", result.plan, result.assoc, result.objective)]
    for b in baselines.benchmark(scn, radii, seed=args.seed):
        rows.append(_comparison_row(scn, b.name, b.plan, b.assoc, b.objective))
    extra = {}
    if args.multi_start > 1:
        best, objectives = baselines.multi_start(scn, None, args.multi_start, args.seed, args.workers)
        if best is not None:
            rows.append(_comparison_row(scn, f"multi_start_{args.multi_start}", best.plan, best.assoc,
                                        best.objective))
        extra["multi_start_objectives"] = [float(v) for v in objectives]
    out = artifacts.write_run(args.out, scn, result, extra)
    header = ["scheme", "sum_rate"] + [f"rate_ceu{k + 1}" for k in range(scn.num_ceus)] + ["min_causality_slack"]
    artifacts.write_rows(out / "comparison.csv", header, rows)
    for row in rows:
        print(f"{row[0]:>24s}  {row[1]:.6f}")
    return 0 if _feasible(result) else 2


def _sweep_one(job):
    scn, name, value = job
    try:
        res = immua.run(with_scalar(scn, name, value))
        return value, res.objective, res.outer_iterations, res.converged and _feasible(res)
    except InfeasibleScenarioError:
        return value, float("nan"), 0, False


def cmd_sweep(args) -> int:
    if not args.param or not args.values:
        raise UsageError("sweep needs --param and --values")
    if args.param not in SWEEP_PARAMS:
        raise UsageError(f"--param must be one of {', '.join(SWEEP_PARAMS)}")
    scn = _load(args)
    values = _floats(args.values, "--values")
    jobs = [(scn, args.param, v) for v in values]
    for _, name, v in jobs:
        with_scalar(scn, name, v)  # validate before spending time
    if args.workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(job) for job in jobs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts.write_rows(out / "sweep.csv", [args.param, "objective", "outer_iterations", "feasible"], rows)
    for v, obj, _, ok in rows:
        print(f"{args.param}={v:g}  objective {obj:.6f}{'' if ok else '  (infeasible)'}")
    return 0 if all(r[3] for r in rows) else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="planner", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=("solve", "benchmark", "sweep"))
    parser.add_argument("scenario", help="scenario YAML file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="RNG seed (required for stochastic commands)")
    parser.add_argument("--radii", default=None, help="circle radii for benchmark, e.g. 200,500,800")
    parser.add_argument("--param", default=None, help=f"sweep parameter: {', '.join(SWEEP_PARAMS)}")
    parser.add_argument("--values", default=None, help="comma-separated sweep values")
    parser.add_argument("--workers", type=int, default=1, help="worker processes for sweeps and multi-start")
    parser.add_argument("--multi-start", type=int, default=0, dest="multi_start",
                        help="number of IMMUA starts (0 or 1 disables)")
    parser.add_argument("--set", action="append", metavar="NAME=VALUE",
                        help="override a scalar scenario field (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return 1
    handlers = {"solve": cmd_solve, "benchmark": cmd_benchmark, "sweep": cmd_sweep}
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InfeasibleScenarioError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
