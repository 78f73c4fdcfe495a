import numpy as np
import pytest

from hbmcts.env import make_world
from hbmcts.planner import (
    EpisodeTrace,
    PlannerConfig,
    StepRecord,
    plan,
    run_episode,
)
from hbmcts.pruning import Strategy


@pytest.fixture
def world():
    return make_world("two_landmark", seed=0)


def test_config_validation():
    with pytest.raises(ValueError):
        PlannerConfig(ucb_c=0.0)
    with pytest.raises(ValueError):
        PlannerConfig(alpha_o=1.5)
    with pytest.raises(ValueError):
        PlannerConfig(horizon_T=0)
    with pytest.raises(ValueError):
        PlannerConfig(rollout_policy="bogus")


def test_plan_returns_visited_best_action(world):
    model, _, root = world
    cfg = PlannerConfig(horizon_T=4, n_simulations=40, seed=0)
    res = plan(root, cfg, model)
    assert res.best_action.id in [a.id for a in model.actions]
    assert res.n_simulations == 40
    assert set(res.q_table) <= {a.id for a in model.actions}
    assert res.q_table[res.best_action.id] == max(res.q_table.values())


def test_plan_is_deterministic_with_fixed_simulations(world):
    model, _, root = world
    cfg = PlannerConfig(horizon_T=4, n_simulations=60, seed=42)
    r1 = plan(root, cfg, model)
    r2 = plan(root, cfg, model)
    assert r1.best_action.id == r2.best_action.id
    assert r1.q_table == r2.q_table
    assert r1.hindsight == r2.hindsight


def test_plan_moves_toward_target(world):
    """From the two-landmark start the target is due east: right must win."""
    model, _, root = world
    cfg = PlannerConfig(horizon_T=6, n_simulations=300, seed=1)
    res = plan(root, cfg, model)
    assert res.best_action.id == "right"


def test_hindsight_below_apriori_for_adaptive(world):
    model, _, root = world
    cfg = PlannerConfig(
        horizon_T=5, n_simulations=100, seed=0, strategy=Strategy.adaptive(), epsilon_bar=30.0
    )
    res = plan(root, cfg, model)
    assert res.apriori == pytest.approx(30.0)
    assert res.hindsight <= res.apriori + 1e-12


def test_zero_budget_hindsight_is_zero(world):
    model, _, root = world
    cfg = PlannerConfig(
        horizon_T=4, n_simulations=50, seed=0, strategy=Strategy.adaptive(), epsilon_bar=0.0
    )
    res = plan(root, cfg, model)
    assert res.hindsight == 0.0
    assert res.apriori == 0.0


def test_progressive_widening_caps_children(world):
    model, _, root = world
    cfg = PlannerConfig(horizon_T=3, n_simulations=200, seed=0, k_o=1.0, alpha_o=0.3)
    res = plan(root, cfg, model)
    for edge in res.root.edges.values():
        assert len(edge.children) <= cfg.k_o * max(edge.n, 1) ** cfg.alpha_o + 1


def test_time_budget_mode_completes(world):
    model, _, root = world
    cfg = PlannerConfig(horizon_T=4, time_budget=0.05, seed=0)
    res = plan(root, cfg, model)
    assert res.n_simulations >= 1


def test_step_record_json_schema():
    rec = StepRecord(0, "up", -1.0, 2, 0.0, 1.0, 0.5, 12.0)
    import json

    d = json.loads(rec.to_json())
    assert set(d) == {
        "step", "action", "reward", "n_hypotheses", "delta_step",
        "apriori_bound", "hindsight_bound", "plan_wallclock_ms",
    }


def test_run_episode_reaches_first_target(world):
    model, gt, root = world
    cfg = PlannerConfig(horizon_T=5, n_simulations=40, seed=0, time_budget=5.0)
    trace = run_episode(gt, root, cfg, model, 12)
    assert len(trace.records) == 12
    assert trace.reached(0)  # target (8,0) is 8 steps east
    assert trace.waypoint_reached_step[0] <= 12
    jsonl = trace.to_jsonl()
    assert len(jsonl.splitlines()) == 12


def test_run_episode_respects_exec_cap():
    model, gt, root = make_world("two_landmark", seed=3)
    cfg = PlannerConfig(
        horizon_T=3, n_simulations=10, seed=0, exec_max_hypotheses=4, time_budget=5.0
    )
    trace = run_episode(gt, root, cfg, model, 6)
    assert all(r.n_hypotheses <= 4 for r in trace.records)


def test_unpruned_episode_hypotheses_double():
    model, gt, root = make_world(
        "two_landmark", {"single_hypothesis_root": True}, seed=0
    )
    cfg = PlannerConfig(
        horizon_T=3, n_simulations=10, seed=0, strategy=Strategy.none(),
        exec_max_hypotheses=10_000, time_budget=5.0,
    )
    trace = run_episode(gt, root, cfg, model, 5)
    assert [r.n_hypotheses for r in trace.records] == [2, 4, 8, 16, 32]
