import numpy as np
import pytest

from hbmcts.env import (
    ConfigError,
    GroundTruth,
    WorldModel,
    exact_expected_reward,
    exact_mixture_reward,
    expected_clamped_distance,
    make_actions,
    make_world,
    reward_fn,
    world_step,
)


def test_actions_are_unit_grid_moves():
    actions = make_actions(1.5)
    assert [a.id for a in actions] == ["up", "down", "left", "right"]
    for a in actions:
        assert np.linalg.norm(a.displacement) == pytest.approx(1.5)


def test_reward_fn_clamps():
    target = np.array([0.0, 0.0])
    assert reward_fn(np.array([3.0, 4.0]), target, 10.0) == pytest.approx(-5.0)
    assert reward_fn(np.array([300.0, 400.0]), target, 10.0) == pytest.approx(-10.0)
    out = reward_fn(np.zeros((4, 2)), target, 10.0)
    assert out.shape == (4,)


def test_make_world_presets_and_overrides():
    model, gt, root = make_world("two_landmark", seed=0)
    assert model.n_landmarks == 2
    assert root.n_components == 2
    assert root.weights.sum() == pytest.approx(1.0)

    model1, _, root1 = make_world(
        "two_landmark", {"single_hypothesis_root": True, "n_landmarks": 1}, seed=0
    )
    assert model1.n_landmarks == 1
    assert root1.n_components == 1

    with pytest.raises(ConfigError):
        make_world("two_landmark", {"no_such_key": 1})
    with pytest.raises(ConfigError):
        make_world("nonexistent_preset")


def test_waypoint_course_landmark_pairs():
    model, _, _ = make_world("waypoint_course", seed=0)
    assert model.targets.shape == (3, 2)
    assert model.n_landmarks == 6
    # each waypoint has a symmetric ambiguous pair around it
    for i in range(3):
        pair = model.landmark_means[2 * i : 2 * i + 2]
        np.testing.assert_allclose(pair.mean(axis=0), model.targets[i], atol=1e-9)


def test_world_step_emits_relative_observation():
    model, gt, _ = make_world("two_landmark", {"process_noise": 0.0, "obs_noise": 0.0}, seed=1)
    gt2, z, assoc = world_step(gt, model.actions[3], model)
    np.testing.assert_allclose(gt2.agent_pos, gt.agent_pos + [1.0, 0.0])
    np.testing.assert_allclose(z, gt.landmark_pos[assoc] - gt2.agent_pos, atol=1e-12)


def test_world_step_respects_gate():
    model, gt, _ = make_world("waypoint_course", seed=0)
    # the agent starts ~20 away from every landmark: gate of 10 admits none
    _, z, assoc = world_step(gt, model.actions[0], model)
    assert z is None and assoc is None


def test_frozen_landmarks_are_exact():
    model, gt, _ = make_world("two_landmark", {"freeze_landmarks": True}, seed=7)
    np.testing.assert_allclose(gt.landmark_pos, model.landmark_means)


def test_expected_clamped_distance_against_monte_carlo():
    rng = np.random.default_rng(0)
    for _ in range(5):
        mean = rng.normal(scale=2.0, size=2)
        sigma2 = float(rng.uniform(0.1, 2.0))
        target = rng.normal(scale=2.0, size=2)
        d_max = float(rng.uniform(1.0, 6.0))
        got = expected_clamped_distance(mean, sigma2 * np.eye(2), target, d_max)
        pts = rng.multivariate_normal(mean, sigma2 * np.eye(2), size=200_000)
        mc = np.minimum(np.linalg.norm(pts - target, axis=1), d_max).mean()
        assert got == pytest.approx(mc, abs=4e-3)


def test_expected_clamped_distance_anisotropic_fallback():
    rng = np.random.default_rng(3)
    cov = np.array([[0.8, 0.3], [0.3, 0.4]])
    mean = np.array([1.0, -0.5])
    got = expected_clamped_distance(mean, cov, np.zeros(2), 3.0)
    pts = rng.multivariate_normal(mean, cov, size=400_000)
    mc = np.minimum(np.linalg.norm(pts, axis=1), 3.0).mean()
    assert got == pytest.approx(mc, abs=4e-3)


def test_expected_clamped_distance_degenerate_sigma():
    assert expected_clamped_distance([3.0, 4.0], np.zeros((2, 2)), [0.0, 0.0], 10.0) == 5.0
    assert expected_clamped_distance([30.0, 40.0], np.zeros((2, 2)), [0.0, 0.0], 10.0) == 10.0


def test_exact_mixture_reward_weighted_sum():
    model, _, root = make_world("two_landmark", seed=0)
    per = [
        exact_expected_reward(root.means[i], root.covs[i], model.target, model.d_max)
        for i in range(root.n_components)
    ]
    expected = float(np.dot(root.weights, per))
    assert exact_mixture_reward(root, model) == pytest.approx(expected)


def test_with_active_target_cycles():
    model, _, _ = make_world("waypoint_course", seed=0)
    m2 = model.with_active_target(2)
    np.testing.assert_allclose(m2.target, model.targets[2])
    assert model.active_target_index == 0  # original unchanged


def test_obs_matrix_blocks():
    model, _, _ = make_world("two_landmark", seed=0)
    H = model.obs_matrix(1)
    x = np.arange(model.state_dim, dtype=float)
    np.testing.assert_allclose(H @ x, x[4:6] - x[:2])
