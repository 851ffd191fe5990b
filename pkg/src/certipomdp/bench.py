"""Episode runner, benchmark suites and the time-to-certified experiment."""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import io
import itertools
import json
import logging
import math
import os
import random
import statistics
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .core import MASK64, Belief, TabularPomdp, belief_update, mix64
from .environments import make_env
from .solvers import SolverConfig, plan

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "env", "solver", "horizon", "seed", "episode", "total_reward", "steps",
    "certified_count", "wall_ms", "status",
)
ENV_STREAM, PLAN_STREAM = 1, 2


def splitmix64(seed: int, index: int) -> int:
    """index-th output of a splitmix64 generator started at ``seed``."""
    return mix64((seed + index * 0x9E3779B97F4A7C15) & MASK64)


def episode_seeds(seed0: int, episode: int) -> tuple[int, int]:
    """(environment seed, planner seed) for one episode."""
    s = (seed0 + episode) & MASK64
    return splitmix64(s, ENV_STREAM), splitmix64(s, PLAN_STREAM)


@dataclass
class EpisodeResult:
    env: str
    solver: str
    seed: int
    horizon: int
    total_reward: float
    steps: int
    step_wall_ms: list[float] = field(default_factory=list)
    certified_count: int = 0
    episode: int = 0
    status: str = "ok"

    @property
    def wall_ms(self) -> float:
        return sum(self.step_wall_ms)


def run_episode(
    model: TabularPomdp, cfg: SolverConfig, seed: int, env: str = "custom", episode: int = 0,
    on_plan=None,
) -> EpisodeResult:
    """Play one episode from the prior, replanning from the exact posterior each step."""
    env_seed, plan_seed = episode_seeds(seed, 0)
    env_rng, plan_rng = random.Random(env_seed), random.Random(plan_seed)
    x = model.sample_prior(env_rng)
    b = Belief.prior(model)
    total = 0.0
    result = EpisodeResult(env, cfg.solver_kind, seed, model.num_steps, 0.0, 0, episode=episode)
    for t in range(model.num_steps):
        step_cfg = dataclasses.replace(cfg, seed=plan_rng.getrandbits(64))
        res = plan(model, b, step_cfg)
        if on_plan is not None:
            on_plan(t, res)
        a = res.chosen_action
        total += model.rewards[x][a]
        result.step_wall_ms.append(res.wall_ms)
        result.certified_count += int(res.certified_optimal)
        result.steps += 1
        if t < model.last_step:
            y = model.sample_next_state(x, a, env_rng)
            z = model.sample_obs(y, env_rng)
            b, _ = belief_update(model, b, a, z)
            x = y
    result.total_reward = total
    return result


# -- suites ----------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    env: str
    solver: str
    horizon: int
    episodes: int
    iterations: int | None
    time_budget_ms: float | None
    seed: int
    uct_c: float
    stop_on_certified: bool = True
    rb_descent: str = "sample"

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            self.solver, self.iterations, self.time_budget_ms, self.uct_c, self.seed,
            stop_on_certified=self.stop_on_certified, rb_descent=self.rb_descent,
        )

    def label(self) -> dict:
        return dataclasses.asdict(self)


_CELL_KEYS = {"env", "solver", "horizon", "episodes", "budget", "iterations", "time_budget_ms",
              "seed", "uct_c", "stop_on_certified", "rb_descent"}
_DEFAULTS = {"episodes": "20", "budget": "1000", "seed": "1", "uct_c": "1.0", "stop_on_certified": "true",
             "rb_descent": "sample"}


class SuiteError(ValueError):
    pass


def parse_suite(text: str) -> tuple[list[Cell], dict[str, str]]:
    """Parse ``[defaults]``/``[cell]`` key=value sections into cells.

    Comma-separated values of env, solver, horizon and budget expand into
    the cartesian grid of cells.
    """
    sections: list[tuple[str, dict[str, str]]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            sections.append((line[1:-1].strip(), {}))
            continue
        if "=" not in line or not sections:
            raise SuiteError(f"line {lineno}: expected key = value inside a section")
        key, value = (s.strip() for s in line.split("=", 1))
        sections[-1][1][key] = value
    defaults = dict(_DEFAULTS)
    options = {}
    cells: list[Cell] = []
    for name, kv in sections:
        if name == "defaults":
            for k, v in kv.items():
                (defaults if k in _CELL_KEYS else options)[k] = v
        elif name == "cell":
            unknown = set(kv) - _CELL_KEYS
            if unknown:
                raise SuiteError(f"unknown cell keys {sorted(unknown)}")
            merged = {**defaults, **kv}
            if "iterations" in merged:
                merged["budget"] = merged.pop("iterations")
            for k in ("env", "solver", "horizon"):
                if k not in merged:
                    raise SuiteError(f"cell is missing {k!r}")
            grid = [merged[k].split(",") for k in ("env", "solver", "horizon", "budget")]
            for env, solver, horizon, budget in itertools.product(*grid):
                budget = budget.strip()
                cells.append(Cell(
                    env=env.strip(),
                    solver=solver.strip(),
                    horizon=int(horizon),
                    episodes=int(merged["episodes"]),
                    iterations=None if budget in ("", "none") else int(budget),
                    time_budget_ms=float(merged["time_budget_ms"]) if "time_budget_ms" in merged else None,
                    seed=int(merged["seed"]),
                    uct_c=float(merged["uct_c"]),
                    stop_on_certified=merged["stop_on_certified"].lower() in ("1", "true", "yes", "on"),
                    rb_descent=merged["rb_descent"],
                ))
        else:
            raise SuiteError(f"unknown section [{name}]")
    if not cells:
        raise SuiteError("suite defines no [cell]")
    return cells, options


def _run_cell_episode(cell: Cell, i: int) -> EpisodeResult:
    model = make_env(cell.env, cell.horizon)
    return run_episode(model, cell.solver_config(), cell.seed + i, cell.env, i)


def _run_task(task):
    cell, i = task
    try:
        return _run_cell_episode(cell, i)
    except Exception as exc:  # a crashing cell is reported, not fatal
        log.exception("cell %s episode %d failed", cell, i)
        return EpisodeResult(cell.env, cell.solver, cell.seed + i, cell.horizon, math.nan, 0,
                             episode=i, status=f"error: {type(exc).__name__}: {exc}".replace(",", ";"))


def thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("CERTIPOMDP_THREADS", "1")))
    except ValueError:
        return 1


def run_cells(cells: list[Cell], threads: int | None = None) -> list[list[EpisodeResult]]:
    tasks = [(c, i) for c in cells for i in range(c.episodes)]
    threads = threads or thread_cap()
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            flat = list(pool.map(_run_task, tasks, chunksize=8))
    else:
        flat = [_run_task(t) for t in tasks]
    out, pos = [], 0
    for c in cells:
        out.append(flat[pos:pos + c.episodes])
        pos += c.episodes
    return out


def episode_rows(results: list[EpisodeResult], timing: bool) -> list[list[str]]:
    rows = []
    for r in results:
        rows.append([
            r.env, r.solver, str(r.horizon), str(r.seed), str(r.episode), repr(float(r.total_reward)),
            str(r.steps), str(r.certified_count), format(r.wall_ms, ".3f") if timing else "NA", r.status,
        ])
    return rows


def mean_stderr(values: list[float]) -> tuple[float, float | None]:
    m = statistics.fmean(values)
    if len(values) < 2:
        return m, None
    return m, statistics.stdev(values) / math.sqrt(len(values))


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             timeout=5, cwd=Path(__file__).resolve().parent)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


@dataclass
class BenchmarkReport:
    cells: list[dict]
    config: dict
    git: str
    timestamp: str
    ok: bool

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


def summarize(cell: Cell, results: list[EpisodeResult]) -> dict:
    good = [r for r in results if r.status == "ok"]
    row = {**cell.label(), "n": len(good), "failed": len(results) - len(good)}
    if good:
        m, se = mean_stderr([r.total_reward for r in good])
        row.update(mean=m, stderr=se,
                   certified_rate=statistics.fmean(r.certified_count / max(r.steps, 1) for r in good),
                   mean_wall_ms=statistics.fmean(r.wall_ms for r in good))
    return row


def run_benchmark(suite: str | Path, out_dir: str | Path, threads: int | None = None) -> tuple[BenchmarkReport, int]:
    """Run every cell of a suite file; write episodes.csv, cells.csv and report.json.

    Returns the report and the process exit code (2 if any episode crashed).
    """
    text = Path(suite).read_text()
    cells, options = parse_suite(text)
    timing = options.get("timing", "off").lower() in ("1", "true", "yes", "on")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    git = git_describe()
    all_results = run_cells(cells, threads)

    buf = io.StringIO()
    buf.write(f"# certipomdp bench {stamp} {git}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for res in all_results:
        w.writerows(episode_rows(res, timing))
    (out / "episodes.csv").write_text(buf.getvalue())

    summary = [summarize(c, r) for c, r in zip(cells, all_results)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["env", "solver", "horizon", "budget", "episodes", "mean", "stderr", "status"])
    for s in summary:
        status = "ok" if s["failed"] == 0 else "error"
        mean = repr(s["mean"]) if "mean" in s else "NA"
        se = repr(s["stderr"]) if s.get("stderr") is not None else "NA"
        w.writerow([s["env"], s["solver"], s["horizon"], s["iterations"], s["n"], mean, se, status])
    (out / "cells.csv").write_text(buf.getvalue())

    ok = all(s["failed"] == 0 for s in summary)
    report = BenchmarkReport(summary, {"suite": str(suite), "options": options}, git, stamp, ok)
    (out / "report.json").write_text(report.to_json())
    return report, 0 if ok else 2


# -- time to certified optimal ----------------------------------------------------


@dataclass
class TtcRow:
    instance: str
    solver: str
    uct_c: float
    seconds: float | None
    iterations: int
    certified: bool

    def csv_fields(self) -> list[str]:
        secs = "CAP" if not self.certified else format(self.seconds, ".6f")
        return [self.instance, self.solver, format(self.uct_c, "g"), secs, str(self.iterations)]


def time_to_certified(
    instances: list[tuple[str, TabularPomdp]],
    solvers: list[str],
    cap_s: float,
    uct_cs: list[float] = (1.0,),
    seeds: list[int] = (0,),
    b0: Belief | None = None,
) -> list[TtcRow]:
    """Wall time until the root is certified, median over seeds; CAP when any seed hits the cap."""
    rows = []
    for (name, model), solver in itertools.product(instances, solvers):
        cs = uct_cs if solver in ("pomcp", "db-pomcp") else [0.0]
        for c in cs:
            times, iters, all_ok = [], [], True
            for s in seeds:
                cfg = SolverConfig(solver, None, cap_s * 1000.0, c, s, stop_on_certified=True)
                t0 = time.perf_counter()
                res = plan(model, b0 or Belief.prior(model), cfg)
                times.append(time.perf_counter() - t0)
                iters.append(res.iterations_used)
                all_ok &= res.certified_optimal and cap_s > 0
            rows.append(TtcRow(name, solver, c, statistics.median(times) if all_ok else None,
                               int(statistics.median(iters)), all_ok))
    return rows


def ttc_csv(rows: list[TtcRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["instance", "solver", "uct_c", "seconds", "iterations"])
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()
