import numpy as np
import pytest

from hbmcts.belief import ConditionalBelief, MixtureBelief
from hbmcts.env import WorldModel, make_actions
from hbmcts.oracle import (
    TinyPOMDP,
    enumerate_policies,
    exact_value,
    exact_value_pruned,
    optimal_regret_check,
    random_tiny,
    single_hypothesis_value,
)
from hbmcts.pruning import Strategy, hindsight_bound


def single_landmark_tiny(horizon=2, n_support=3, seed=0):
    rng = np.random.default_rng(seed)
    landmark = rng.uniform(-2.0, 2.0, size=(1, 2))
    model = WorldModel(
        landmark_means=landmark,
        landmark_prior_cov=np.stack([0.2 * np.eye(2)]),
        step_size=1.0,
        process_noise_cov=0.1 * np.eye(2),
        obs_noise_cov=0.3 * np.eye(2),
        targets=rng.uniform(-2.0, 2.0, size=(1, 2)),
        d_max=50.0,
        obs_support=rng.uniform(-4.0, 4.0, size=(n_support, 2)),
    )
    cov = np.zeros((4, 4))
    cov[:2, :2] = 0.3 * np.eye(2)
    cov[2:, 2:] = 0.2 * np.eye(2)
    mean = np.concatenate([rng.uniform(-1, 1, size=2), landmark[0]])
    root = MixtureBelief.from_components([((0,), 1.0, ConditionalBelief(mean, cov))])
    return TinyPOMDP(model=model, root=root, actions=make_actions(1.0)[:2], horizon=horizon)


def test_tiny_rejects_continuous_or_huge_instances():
    tiny = random_tiny(np.random.default_rng(0))
    with pytest.raises(ValueError):
        TinyPOMDP(
            model=WorldModel(
                landmark_means=tiny.model.landmark_means,
                landmark_prior_cov=tiny.model.landmark_prior_cov,
                step_size=1.0,
                process_noise_cov=tiny.model.process_noise_cov,
                obs_noise_cov=tiny.model.obs_noise_cov,
                targets=tiny.model.targets,
                d_max=50.0,
            ),
            root=tiny.root,
            actions=tiny.actions,
            horizon=2,
        )
    with pytest.raises(ValueError):
        TinyPOMDP(model=tiny.model, root=tiny.root, actions=tiny.actions, horizon=9)


def test_exact_value_matches_independent_single_hypothesis_route():
    """Two independent evaluators (mixture enumeration vs. plain Kalman
    recursion) must agree on a one-landmark, one-hypothesis instance."""
    for seed in range(5):
        tiny = single_landmark_tiny(seed=seed)
        policy = lambda hist: tiny.actions[len(hist) % 2]
        v_mix = exact_value(tiny, policy)
        v_single = single_hypothesis_value(tiny, policy)
        assert v_mix == pytest.approx(v_single, abs=1e-9)


def test_single_hypothesis_value_requires_one_landmark():
    tiny = random_tiny(np.random.default_rng(0))
    with pytest.raises(ValueError):
        single_hypothesis_value(tiny, lambda h: tiny.actions[0])


def test_exact_value_pruned_with_none_strategy_is_exact_value():
    tiny = random_tiny(np.random.default_rng(1))
    policy = lambda hist: tiny.actions[0]
    v = exact_value(tiny, policy)
    vbar, deltas = exact_value_pruned(tiny, policy, Strategy.none())
    assert vbar == pytest.approx(v, abs=1e-12)
    assert all(d == 0.0 for _, d in deltas)


def test_exact_value_pruned_bound_holds():
    for i in range(10):
        tiny = random_tiny(np.random.default_rng(100 + i))
        policy = lambda hist: tiny.actions[len(hist) % len(tiny.actions)]
        v = exact_value(tiny, policy)
        vbar, deltas = exact_value_pruned(tiny, policy, Strategy.adaptive(), delta=0.1)
        bound = hindsight_bound(deltas, tiny.horizon, tiny.model.r_max)
        assert abs(v - vbar) <= bound + 1e-9


def test_root_depth_delta_is_zero():
    tiny = random_tiny(np.random.default_rng(2))
    _, deltas = exact_value_pruned(
        tiny, lambda h: tiny.actions[0], Strategy.k_best(1), delta=0.0
    )
    assert deltas[0] == (0, 0.0)


def test_enumerate_policies_count():
    tiny = random_tiny(np.random.default_rng(0), horizon=2, n_support=3, n_actions=2)
    # histories: the empty one plus K^1 at depth 1 => 1 + 3 = 4 decision points
    policies = list(enumerate_policies(tiny))
    assert len(policies) == 2 ** 4
    # each policy is a valid feedback map
    for pi in policies[:3]:
        assert pi(()) in tiny.actions
        assert pi((0,)) in tiny.actions


def test_optimal_regret_check_zero_delta():
    tiny = random_tiny(np.random.default_rng(5))
    regret, bound = optimal_regret_check(tiny, Strategy.adaptive(), delta=0.0)
    assert regret == pytest.approx(0.0, abs=1e-9)
    assert bound == pytest.approx(0.0, abs=1e-12)


def test_observation_marginal_sums_to_one():
    from hbmcts.oracle import _obs_marginal_log

    tiny = random_tiny(np.random.default_rng(7))
    log_marg = _obs_marginal_log(tiny.root, tiny.actions[0], tiny.model)
    assert np.exp(log_marg).sum() == pytest.approx(1.0, abs=1e-9)


def test_random_tiny_single_hypothesis_variant():
    tiny = random_tiny(np.random.default_rng(0), two_hypothesis_root=False)
    assert tiny.root.n_components == 1
