"""Brute-force ground truth on tiny instances.

Worlds here carry a small discrete observation support, so every observation
and association sequence can be enumerated and posterior mixtures computed
exactly.  Expected rewards use the closed-form/quadrature evaluator rather
than sampling, making the inequality checks deterministic.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .belief import Action, ConditionalBelief, MixtureBelief, log_predictive_density, mixture_update, _predict_arrays
from .env import WorldModel, exact_mixture_reward, make_actions
from .pruning import Strategy, apply_strategy, hindsight_bound

Policy = Callable[[tuple[int, ...]], Action]
"""Maps the observed index history (into the support) to the next action."""


@dataclass(frozen=True)
class TinyPOMDP:
    """An enumerable instance: discrete observations, few sources, short horizon."""

    model: WorldModel
    root: MixtureBelief
    actions: tuple[Action, ...]        # the admissible action set
    horizon: int

    def __post_init__(self):
        if self.model.obs_support is None:
            raise ValueError("tiny instances require a discrete observation support")
        n_outcomes = (len(self.model.obs_support) * self.model.n_landmarks) ** self.horizon
        if n_outcomes > 10_000:
            raise ValueError(f"outcome count {n_outcomes} exceeds the enumerable budget")


def _obs_marginal_log(b: MixtureBelief, action: Action, model: WorldModel) -> np.ndarray:
    """log P(z_k | H^-) for every support point, under mixture b."""
    from scipy.special import logsumexp

    means, covs = _predict_arrays(b.means, b.covs, action, model)
    L = model.n_landmarks
    per_assoc = [
        np.stack([log_predictive_density(means, covs, model, j, z) for z in model.obs_support])
        for j in range(L)
    ]  # each (K, n)
    stacked = np.stack(per_assoc)  # (L, K, n)
    out = logsumexp(stacked - np.log(L) + b.log_weights[None, None, :], axis=(0, 2))
    return out


def exact_value(tiny: TinyPOMDP, policy: Policy) -> float:
    """Exact expected cumulative reward of the policy on the full model."""
    model = tiny.model

    def recurse(b: MixtureBelief, hist: tuple[int, ...], t: int, prob: float) -> float:
        value = prob * exact_mixture_reward(b, model)
        if t == tiny.horizon:
            return value
        action = policy(hist)
        log_marg = _obs_marginal_log(b, action, model)
        marg = np.exp(log_marg)
        for k, z in enumerate(model.obs_support):
            if marg[k] <= 0.0:
                continue
            child = mixture_update(b, action, z, model)
            value += recurse(child, hist + (k,), t + 1, prob * float(marg[k]))
        return value

    return recurse(tiny.root, (), 0, 1.0)


def exact_value_pruned(
    tiny: TinyPOMDP, policy: Policy, strategy: Strategy, delta: float = 0.0
) -> tuple[float, list[tuple[int, float]]]:
    """Exact pruned-model value plus the exact expected pruned mass per depth.

    Pruning is applied after every update; the root is left intact, so the
    depth-0 term is zero.  The expectation over observations uses the pruned
    observation marginal, matching how the loss bound is defined.
    """
    model = tiny.model
    deltas = np.zeros(tiny.horizon + 1)

    def recurse(b: MixtureBelief, hist: tuple[int, ...], t: int, prob: float) -> float:
        value = prob * exact_mixture_reward(b, model)
        if t == tiny.horizon:
            return value
        action = policy(hist)
        log_marg = _obs_marginal_log(b, action, model)
        marg = np.exp(log_marg)
        for k, z in enumerate(model.obs_support):
            if marg[k] <= 0.0:
                continue
            child = mixture_update(b, action, z, model)
            child, receipt = apply_strategy(child, strategy, delta)
            deltas[t + 1] += prob * float(marg[k]) * receipt.delta_step
            value += recurse(child, hist + (k,), t + 1, prob * float(marg[k]))
        return value

    v = recurse(tiny.root, (), 0, 1.0)
    return v, [(d, float(deltas[d])) for d in range(tiny.horizon + 1)]


def single_hypothesis_value(tiny: TinyPOMDP, policy: Policy) -> float:
    """Independent evaluator for L=1 worlds: plain Gaussian filtering, no mixtures."""
    model = tiny.model
    if model.n_landmarks != 1:
        raise ValueError("single-hypothesis evaluator requires exactly one source")
    from .belief import conditional_update, predict
    from .env import exact_expected_reward

    def recurse(cb: ConditionalBelief, hist: tuple[int, ...], t: int, prob: float) -> float:
        value = prob * exact_expected_reward(cb.mean, cb.cov, model.target, model.d_max)
        if t == tiny.horizon:
            return value
        action = policy(hist)
        pred = predict(cb, action, model)
        for k, z in enumerate(model.obs_support):
            post, lik = conditional_update(pred, z, 0, model)
            value += recurse(post, hist + (k,), t + 1, prob * float(lik))
        return value

    _, root_w, root_cb = tiny.root.component(0)
    return recurse(root_cb, (), 0, 1.0)


# ---------------------------------------------------------------------------
# Policy enumeration and regret

def enumerate_policies(tiny: TinyPOMDP):
    """All observation-feedback policy trees over the instance."""
    K = len(tiny.model.obs_support)
    histories: list[tuple[int, ...]] = [()]
    for t in range(1, tiny.horizon):
        histories.extend(itertools.product(range(K), repeat=t))
    for choice in itertools.product(tiny.actions, repeat=len(histories)):
        table = dict(zip(histories, choice))
        yield lambda hist, table=table: table[hist]


def optimal_regret_check(tiny: TinyPOMDP, strategy: Strategy, delta: float = 0.0):
    """Exact regret of the pruned-optimal policy vs. the full-model optimum.

    Returns ``(regret, bound)`` with ``bound = 2 * max`` of the hindsight
    bounds of the two policies involved (evaluation here is exact, so there
    is no estimation slack term).
    """
    best_full, best_full_pi = -np.inf, None
    best_pruned, best_pruned_pi = -np.inf, None
    for pi in enumerate_policies(tiny):
        v = exact_value(tiny, pi)
        if v > best_full:
            best_full, best_full_pi = v, pi
        vbar, _ = exact_value_pruned(tiny, pi, strategy, delta)
        if vbar > best_pruned:
            best_pruned, best_pruned_pi = vbar, pi

    regret = best_full - exact_value(tiny, best_pruned_pi)
    r_max = tiny.model.r_max
    bounds = []
    for pi in (best_full_pi, best_pruned_pi):
        _, deltas = exact_value_pruned(tiny, pi, strategy, delta)
        bounds.append(hindsight_bound(deltas, tiny.horizon, r_max))
    return float(regret), float(2.0 * max(bounds))


# ---------------------------------------------------------------------------
# Randomized instance generator for verification sweeps

def random_tiny(
    rng: np.random.Generator,
    horizon: int = 2,
    n_support: int = 3,
    n_actions: int = 2,
    two_hypothesis_root: bool = True,
) -> TinyPOMDP:
    """A small random two-source world with a discrete observation support."""
    landmarks = rng.uniform(-3.0, 3.0, size=(2, 2))
    target = rng.uniform(-3.0, 3.0, size=2)
    agent = rng.uniform(-1.0, 1.0, size=2)
    lm_var = float(rng.uniform(0.05, 0.4))
    model = WorldModel(
        landmark_means=landmarks,
        landmark_prior_cov=np.stack([lm_var * np.eye(2)] * 2),
        step_size=1.0,
        process_noise_cov=float(rng.uniform(0.02, 0.2)) * np.eye(2),
        obs_noise_cov=float(rng.uniform(0.05, 0.5)) * np.eye(2),
        targets=target[None, :],
        d_max=50.0,
        obs_support=rng.uniform(-5.0, 5.0, size=(n_support, 2)),
    )
    dim = model.state_dim
    cov = np.zeros((dim, dim))
    cov[:2, :2] = float(rng.uniform(0.05, 0.5)) * np.eye(2)
    for j in range(2):
        cov[2 + 2 * j : 4 + 2 * j, 2 + 2 * j : 4 + 2 * j] = model.landmark_prior_cov[j]
    base = np.concatenate([agent, landmarks.ravel()])
    if two_hypothesis_root:
        other = base.copy()
        other[:2] += rng.uniform(-1.0, 1.0, size=2)
        w = float(rng.uniform(0.3, 0.7))
        comps = [
            ((0,), w, ConditionalBelief(base, cov)),
            ((1,), 1.0 - w, ConditionalBelief(other, cov.copy())),
        ]
    else:
        comps = [((0,), 1.0, ConditionalBelief(base, cov))]
    root = MixtureBelief.from_components(comps, history_len=0)
    actions = make_actions(1.0)[:n_actions]
    return TinyPOMDP(model=model, root=root, actions=tuple(actions), horizon=horizon)
