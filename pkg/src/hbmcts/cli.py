"""Experiment runner: solver sweeps, report rendering, verification suites.

Subcommands:
  run <config.yaml>   episode or value-bound sweeps, CSV + JSON summary out
  report <summary>    render a success-rate table / bound listing to stdout
  verify              run the deterministic inequality suites

Exit codes: 0 ok, 1 config error, 2 I/O error, 3 verification failure.
The HBMCTS_WORKERS environment variable sets the trial worker-pool size.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .env import ConfigError, PRESETS, make_world
from .estimators import bound_estimate, sn_value_pair
from .oracle import optimal_regret_check, random_tiny
from .planner import PlannerConfig, plan, run_episode
from .pruning import Strategy, delta_from_epsilon, hindsight_bound

EPISODE_COLUMNS = [
    "solver", "trial", "seed", "step", "action", "reward", "n_hypotheses",
    "delta_step", "apriori_bound", "hindsight_bound", "plan_ms",
]
VALUE_COLUMNS = ["epsilon", "seed", "v_full", "v_pruned", "bound_hi", "bound_lo", "plan_ms"]

_PLANNER_KEYS = {
    "horizon", "ucb_c", "k_o", "alpha_o", "time_budget_ms", "n_simulations",
    "n_state_samples", "rollout_policy", "exec_max_hypotheses",
}


def _fail_config(msg: str):
    raise ConfigError(msg)


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except OSError as exc:
        raise IOError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(cfg, dict):
        _fail_config("config root must be a mapping")
    return validate_config(cfg)


def validate_config(cfg: dict) -> dict:
    mode = cfg.get("mode", "episodes")
    if mode not in ("episodes", "value_bounds"):
        _fail_config(f"unknown mode {mode!r}")
    world = cfg.get("world") or {}
    preset = world.get("preset")
    if preset not in PRESETS:
        _fail_config(f"world.preset must be one of {PRESETS}, got {preset!r}")
    planner = cfg.get("planner") or {}
    for key in planner:
        if key not in _PLANNER_KEYS:
            _fail_config(f"unknown planner key {key!r}")
    if mode == "episodes":
        solvers = cfg.get("solvers")
        if not solvers:
            _fail_config("solver grid is empty: at least one solver is required")
        for s in solvers:
            if "name" not in s or "strategy" not in s:
                _fail_config(f"solver entry missing name/strategy: {s!r}")
            kind = s["strategy"]
            if kind not in ("none", "adaptive", "k_best", "threshold"):
                _fail_config(f"unknown strategy {kind!r} in solver {s.get('name')!r}")
            if kind == "k_best" and "k" not in s:
                _fail_config(f"solver {s['name']!r}: k_best requires 'k'")
            if kind == "threshold" and "p_thresh" not in s:
                _fail_config(f"solver {s['name']!r}: threshold requires 'p_thresh'")
            if kind == "adaptive" and not ("epsilon_bar" in s or "epsilon_frac" in s):
                _fail_config(f"solver {s['name']!r}: adaptive requires epsilon_bar or epsilon_frac")
    else:
        if not cfg.get("epsilon_list"):
            _fail_config("value_bounds mode requires a non-empty epsilon_list")
    if int(cfg.get("trials", 1)) < 1 or int(cfg.get("steps", 1)) < 1:
        _fail_config("trials and steps must be >= 1")
    return cfg


def _solver_strategy(s: dict, horizon: int, r_max: float) -> tuple[Strategy, float]:
    kind = s["strategy"]
    if kind == "adaptive":
        eps = s.get("epsilon_bar")
        if eps is None:
            eps = float(s["epsilon_frac"]) * r_max * (horizon + 1)
        return Strategy.adaptive(), float(eps)
    if kind == "k_best":
        return Strategy.k_best(int(s["k"])), 0.0
    if kind == "threshold":
        return Strategy.threshold(float(s["p_thresh"])), 0.0
    return Strategy.none(), 0.0


def _planner_config(cfg: dict, strategy: Strategy, epsilon_bar: float, seed: int) -> PlannerConfig:
    p = cfg.get("planner") or {}
    return PlannerConfig(
        ucb_c=float(p.get("ucb_c", 5.0)),
        k_o=float(p.get("k_o", 3.0)),
        alpha_o=float(p.get("alpha_o", 0.5)),
        horizon_T=int(p.get("horizon", 10)),
        epsilon_bar=epsilon_bar,
        strategy=strategy,
        time_budget=float(p.get("time_budget_ms", 500)) / 1e3,
        n_simulations=p.get("n_simulations"),
        rollout_policy=p.get("rollout_policy", "greedy_to_target"),
        seed=seed,
        n_state_samples=int(p.get("n_state_samples", 16)),
        exec_max_hypotheses=int(p.get("exec_max_hypotheses", 128)),
    )


def _episode_job(args):
    cfg, solver, trial = args
    seed = int(cfg.get("seed", 0)) + trial
    world = cfg["world"]
    model, gt, root = make_world(world["preset"], world.get("overrides"), seed=seed)
    horizon = int((cfg.get("planner") or {}).get("horizon", 10))
    strategy, epsilon_bar = _solver_strategy(solver, horizon, model.r_max)
    pconfig = _planner_config(cfg, strategy, epsilon_bar, seed)
    trace = run_episode(gt, root, pconfig, model, int(cfg.get("steps", 60)))
    rows = [
        [
            solver["name"], trial, seed, r.step, r.action, repr(float(r.reward)),
            r.n_hypotheses, repr(float(r.delta_step)), repr(float(r.apriori_bound)),
            repr(float(r.hindsight_bound)), repr(float(r.plan_wallclock_ms)),
        ]
        for r in trace.records
    ]
    reached = {str(k): v for k, v in trace.waypoint_reached_step.items()}
    total_reward = float(sum(r.reward for r in trace.records))
    mean_plan = float(np.mean([r.plan_wallclock_ms for r in trace.records]))
    return rows, {
        "solver": solver["name"],
        "trial": trial,
        "seed": seed,
        "reached": reached,
        "total_reward": total_reward,
        "mean_plan_ms": mean_plan,
    }


def _n_workers() -> int:
    try:
        return max(1, int(os.environ.get("HBMCTS_WORKERS", "1")))
    except ValueError:
        return 1


def run_sweep(cfg: dict, out_dir=None) -> tuple[Path, Path]:
    """Run the configured sweep; write per-step CSV and JSON summary."""
    cfg = validate_config(cfg)
    out = Path(out_dir or cfg.get("out", "results"))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOError(f"cannot create output directory: {exc}") from exc

    if cfg.get("mode", "episodes") == "episodes":
        rows, summary = _run_episode_sweep(cfg)
        columns = EPISODE_COLUMNS
    else:
        rows, summary = _run_value_sweep(cfg)
        columns = VALUE_COLUMNS

    csv_path = out / "steps.csv"
    summary_path = out / "summary.json"
    try:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)
        csv_path.write_text(buf.getvalue())
        summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IOError(f"cannot write results: {exc}") from exc
    return csv_path, summary_path


def _run_episode_sweep(cfg: dict):
    trials = int(cfg.get("trials", 1))
    jobs = [(cfg, solver, trial) for solver in cfg["solvers"] for trial in range(trials)]
    workers = _n_workers()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_episode_job, jobs))
    else:
        results = [_episode_job(j) for j in jobs]

    rows = []
    per_trial = []
    for job_rows, meta in results:
        rows.extend(job_rows)
        per_trial.append(meta)

    n_waypoints = len((cfg.get("world") or {}).get("overrides", {}).get("targets", ())) or None
    solvers = {}
    for solver in cfg["solvers"]:
        metas = [m for m in per_trial if m["solver"] == solver["name"]]
        if n_waypoints is None:
            n_waypoints = 3 if cfg["world"]["preset"] == "waypoint_course" else 1
        success = {
            f"waypoint_{w + 1}": 100.0
            * sum(1 for m in metas if str(w) in m["reached"]) / max(len(metas), 1)
            for w in range(n_waypoints)
        }
        totals = np.array([m["total_reward"] for m in metas])
        solvers[solver["name"]] = {
            "success_pct": success,
            "mean_total_reward": float(totals.mean()),
            "se_total_reward": float(totals.std() / np.sqrt(max(len(totals), 1))),
            "mean_plan_ms": float(np.mean([m["mean_plan_ms"] for m in metas])),
            "trials": len(metas),
        }
    summary = {"mode": "episodes", "solvers": solvers, "per_trial": per_trial}
    return rows, summary


def _run_value_sweep(cfg: dict):
    world = cfg["world"]
    planner = cfg.get("planner") or {}
    horizon = int(planner.get("horizon", 4))
    trials = int(cfg.get("trials", 1))
    base_seed = int(cfg.get("seed", 0))
    n_obs = int(cfg.get("n_obs_per_step", 2))
    rows = []
    cells = {}
    normalizer = None
    for eps in cfg["epsilon_list"]:
        eps = float(eps)
        gaps, bounds = [], []
        for trial in range(trials):
            seed = base_seed + trial
            model, gt, root = make_world(world["preset"], world.get("overrides"), seed=seed)
            # rewards lie in [-r_max, 0], so max{|V_min|, |V_max|} = r_max (T+1)
            normalizer = model.r_max * (horizon + 1)
            delta = delta_from_epsilon(eps, horizon, model.r_max)
            actions = [model.actions[0]] * horizon
            res = sn_value_pair(
                root, actions, model, n_obs, Strategy.adaptive(), seed,
                n_state_samples=int(planner.get("n_state_samples", 64)), delta=delta,
            )
            bound = bound_estimate(res.receipts, horizon, model.r_max)
            pconfig = _planner_config(
                cfg, Strategy.adaptive(), eps, seed
            )
            t0 = time.perf_counter()
            plan(root, pconfig, model)
            plan_ms = (time.perf_counter() - t0) * 1e3
            rows.append(
                [repr(eps), seed, repr(res.value_full), repr(res.value_pruned),
                 repr(res.value_pruned + bound), repr(res.value_pruned - bound), repr(plan_ms)]
            )
            gaps.append(abs(res.value_full - res.value_pruned))
            bounds.append(bound)
        cells[repr(eps)] = {
            "mean_gap": float(np.mean(gaps)),
            "mean_bound": float(np.mean(bounds)),
            "se_gap": float(np.std(gaps) / np.sqrt(len(gaps))),
            "mean_gap_normalized": float(np.mean(gaps) / normalizer),
            "mean_bound_normalized": float(np.mean(bounds) / normalizer),
        }
    summary = {"mode": "value_bounds", "cells": cells, "normalizer": normalizer}
    return rows, summary


# ---------------------------------------------------------------------------
# report

def render_report(summary: dict) -> str:
    out = []
    if summary.get("mode") == "episodes":
        solvers = summary["solvers"]
        waypoints = sorted(
            {k for s in solvers.values() for k in s["success_pct"]},
            key=lambda k: int(k.split("_")[1]),
        )
        header = ["Algorithm"] + [f"Waypoint {k.split('_')[1]}" for k in waypoints]
        out.append("  ".join(f"{h:<22}" for h in header).rstrip())
        for name, stats in solvers.items():
            cells = [f"{stats['success_pct'][k]:.1f}%" for k in waypoints]
            out.append("  ".join(f"{c:<22}" for c in [name] + cells).rstrip())
    elif summary.get("mode") == "value_bounds":
        out.append(f"{'epsilon':<12}{'mean |gap|':<16}{'mean bound':<16}")
        for eps, cell in summary["cells"].items():
            out.append(f"{eps:<12}{cell['mean_gap']:<16.6g}{cell['mean_bound']:<16.6g}")
    else:
        raise ValueError("summary file has no recognizable mode")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# verify

def run_verification(sweep_size: int = 200, seed: int = 0, log=print) -> bool:
    """Deterministic inequality suites on random tiny instances."""
    from .pruning import Strategy

    rng = np.random.default_rng(seed)
    ok_all = True

    # zero-budget identity
    tiny = random_tiny(rng)
    actions = [tiny.actions[0]] * tiny.horizon
    res = sn_value_pair(tiny.root, actions, tiny.model, 2, Strategy.adaptive(), 7, delta=0.0)
    identical = res.value_full == res.value_pruned
    zero_bound = bound_estimate(res.receipts, tiny.horizon, tiny.model.r_max) == 0.0
    ok = identical and zero_bound
    ok_all &= ok
    log(f"[{'PASS' if ok else 'FAIL'}] zero-budget identity (bit-equal values, zero bound)")

    strategies = {
        "adaptive": (Strategy.adaptive(), 0.05),
        "k_best": (Strategy.k_best(2), 0.0),
        "threshold": (Strategy.threshold(0.15), 0.0),
    }

    # estimator-level bound (full vs pruned SN on shared samples)
    for name, (strategy, delta) in strategies.items():
        failures = 0
        for i in range(sweep_size):
            tiny = random_tiny(np.random.default_rng(1000 + i))
            actions = [tiny.actions[(i + k) % len(tiny.actions)] for k in range(tiny.horizon)]
            res = sn_value_pair(tiny.root, actions, tiny.model, 2, strategy, i, delta=delta)
            bound = bound_estimate(res.receipts, tiny.horizon, tiny.model.r_max)
            if abs(res.value_full - res.value_pruned) > bound + 1e-9:
                failures += 1
        ok = failures == 0
        ok_all &= ok
        log(f"[{'PASS' if ok else 'FAIL'}] estimator bound, {name}: "
            f"{sweep_size - failures}/{sweep_size}")

    # exact-value bound
    failures = 0
    for i in range(sweep_size):
        tiny = random_tiny(np.random.default_rng(2000 + i))
        policy = _fixed_policy(tiny, i)
        from .oracle import exact_value, exact_value_pruned
        v = exact_value(tiny, policy)
        vbar, deltas = exact_value_pruned(tiny, policy, Strategy.adaptive(), delta=0.08)
        bound = hindsight_bound(deltas, tiny.horizon, tiny.model.r_max)
        if abs(v - vbar) > bound + 1e-9:
            failures += 1
    ok = failures == 0
    ok_all &= ok
    log(f"[{'PASS' if ok else 'FAIL'}] exact-value bound: {sweep_size - failures}/{sweep_size}")

    # regret bound
    failures = 0
    for i in range(sweep_size):
        tiny = random_tiny(np.random.default_rng(3000 + i))
        regret, bound = optimal_regret_check(tiny, Strategy.adaptive(), delta=0.08)
        if regret > bound + 1e-9:
            failures += 1
    ok = failures == 0
    ok_all &= ok
    log(f"[{'PASS' if ok else 'FAIL'}] pruned-optimal regret bound: "
        f"{sweep_size - failures}/{sweep_size}")
    return bool(ok_all)


def _fixed_policy(tiny, i: int):
    def policy(hist, tiny=tiny, i=i):
        return tiny.actions[(len(hist) + i) % len(tiny.actions)]

    return policy


# ---------------------------------------------------------------------------
# entry point

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hbmcts", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a sweep from a YAML config")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--time-budget-ms", type=float, default=None)
    p_run.add_argument("--out", default=None)

    p_report = sub.add_parser("report", help="render a summary file")
    p_report.add_argument("summary")

    p_verify = sub.add_parser("verify", help="run the inequality suites")
    p_verify.add_argument("--sweep-size", type=int, default=200)
    p_verify.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg["seed"] = args.seed
            if args.time_budget_ms is not None:
                cfg.setdefault("planner", {})["time_budget_ms"] = args.time_budget_ms
            csv_path, summary_path = run_sweep(cfg, out_dir=args.out)
            print(f"wrote {csv_path} and {summary_path}")
            return 0
        if args.command == "report":
            try:
                summary = json.loads(Path(args.summary).read_text())
                print(render_report(summary))
            except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
                print(f"error: malformed or unreadable summary: {exc}", file=sys.stderr)
                return 2
            return 0
        if args.command == "verify":
            return 0 if run_verification(args.sweep_size, args.seed) else 3
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except IOError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
