"""Command line entry point: ``plan``, ``bench``, ``certify`` and ``ttc``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from .bench import CSV_COLUMNS, episode_rows, run_benchmark, run_episode, time_to_certified, ttc_csv
from .core import Belief, save_model
from .environments import ENVIRONMENTS, ParamError, make_env
from .oracle import TooLarge, check_size
from .solvers import RB_DESCENTS, SOLVERS, CertificationFailure, SolverConfig, certify_against_oracle, plan


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--env", required=True, choices=sorted(ENVIRONMENTS))
    p.add_argument("--solver", default="db-pomcp", choices=SOLVERS)
    p.add_argument("--horizon", type=int, default=None, help="number of decision steps")
    budget = p.add_mutually_exclusive_group()
    budget.add_argument("--iterations", type=int, default=None)
    budget.add_argument("--time-budget-ms", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--uct-c", type=float, default=1.0, help="exploration constant, multiplied by V_max")
    p.add_argument("--rb-descent", choices=RB_DESCENTS, default="sample",
                   help="rb-pomcp state/observation choice: model sampling or bound-driven")


def _config(args) -> SolverConfig:
    iterations = args.iterations
    if iterations is None and args.time_budget_ms is None:
        iterations = 1000
    return SolverConfig(args.solver, iterations, args.time_budget_ms, args.uct_c, args.seed,
                        rb_descent=args.rb_descent)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="certipomdp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="run planning episodes and emit per-episode CSV")
    _add_common(p)
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--output", type=Path, default=None, help="CSV path (stdout if omitted)")
    p.add_argument("--trace-bounds", type=Path, default=None,
                   help="CSV of root bounds per iteration for the first planning call")
    p.add_argument("--dump-tree", type=Path, default=None, help="tree of the first planning call")
    p.add_argument("--dump-model", type=Path, default=None, help="write the model in pomdp v1 format")
    p.add_argument("--timing", action="store_true", help="fill the wall_ms column")

    p = sub.add_parser("bench", help="run a benchmark suite")
    p.add_argument("--suite", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True, help="output directory")

    p = sub.add_parser("certify", help="plan once at the prior and check against the exact oracle")
    _add_common(p)

    p = sub.add_parser("ttc", help="time until the root action is certified optimal")
    p.add_argument("--env", default="tiger", choices=sorted(ENVIRONMENTS))
    p.add_argument("--horizons", default="2,3,4")
    p.add_argument("--solvers", default="rb-pomcp,db-pomcp")
    p.add_argument("--uct-c", default="1.0", help="comma-separated exploration constants")
    p.add_argument("--cap-s", type=float, default=60.0)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--output", type=Path, default=None)
    return parser


def cmd_plan(args) -> int:
    model = make_env(args.env, args.horizon)
    if args.dump_model:
        save_model(model, args.dump_model)
    cfg = _config(args)
    if cfg.solver_kind in ("exact", "udb-full"):
        try:
            check_size(model, 0)
        except TooLarge as exc:
            print(f"refusing --solver {cfg.solver_kind}: {exc}", file=sys.stderr)
            return 2
    trace_rows: list[tuple] = []
    first = {"done": False}

    def capture(t, res):
        if first["done"]:
            return
        first["done"] = True
        if args.dump_tree and getattr(res.tree, "dump", None):
            res.tree.dump(args.dump_tree)

    results = []
    for i in range(args.episodes):
        hook = capture if i == 0 else None
        results.append(run_episode(model, cfg, args.seed + i, args.env, i, on_plan=hook))
    if args.trace_bounds:
        tcfg = _config(args)
        plan(model, Belief.prior(model), _first_step_config(tcfg, args.seed),
             trace=lambda *row: trace_rows.append(row))
        with open(args.trace_bounds, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "node_depth", "P_h", "U", "L"])
            for it, d, ph, u, l in trace_rows:
                w.writerow([it, d, repr(ph), repr(u), repr(l)])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    w.writerows(episode_rows(results, args.timing))
    if args.output:
        args.output.write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def _first_step_config(cfg: SolverConfig, seed: int) -> SolverConfig:
    """Config of the first planning call of episode ``seed`` (same planner stream)."""
    import dataclasses
    import random

    from .bench import episode_seeds

    _, plan_seed = episode_seeds(seed, 0)
    return dataclasses.replace(cfg, seed=random.Random(plan_seed).getrandbits(64))


def cmd_bench(args) -> int:
    report, code = run_benchmark(args.suite, args.output)
    for cell in report.cells:
        mean = cell.get("mean")
        se = cell.get("stderr")
        print(f"{cell['env']:<10} {cell['solver']:<9} H={cell['horizon']:<3} n={cell['n']:<4} "
              f"mean={mean if mean is None else round(mean, 3)} se={se if se is None else round(se, 3)}")
    return code


def cmd_certify(args) -> int:
    model = make_env(args.env, args.horizon)
    try:
        check_size(model, 0)
    except TooLarge as exc:
        print(f"oracle infeasible: {exc}", file=sys.stderr)
        return 2
    cfg = _config(args)
    b0 = Belief.prior(model)
    res = plan(model, b0, cfg)
    try:
        report = certify_against_oracle(model, b0, res)
    except CertificationFailure as exc:
        print(f"CERTIFICATION FAILURE: {exc}", file=sys.stderr)
        return 1
    out = report.as_dict()
    out.update(solver=cfg.solver_kind, iterations=res.iterations_used, wall_ms=round(res.wall_ms, 3),
               intervals={a: [iv.lower, iv.upper] for a, iv in res.intervals.items()},
               pruned=sorted(res.pruned))
    print(json.dumps(out, indent=2))
    return 0


def cmd_ttc(args) -> int:
    horizons = [int(h) for h in args.horizons.split(",")]
    instances = [(f"{args.env}-H{h}", make_env(args.env, h)) for h in horizons]
    rows = time_to_certified(
        instances, args.solvers.split(","), args.cap_s,
        [float(c) for c in args.uct_c.split(",")], [int(s) for s in args.seeds.split(",")],
    )
    text = ttc_csv(rows)
    if args.output:
        args.output.write_text(text)
    sys.stdout.write(text)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    handlers = {"plan": cmd_plan, "bench": cmd_bench, "certify": cmd_certify, "ttc": cmd_ttc}
    try:
        return handlers[args.command](args)
    except ParamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
