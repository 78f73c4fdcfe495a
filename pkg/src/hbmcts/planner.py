"""Monte-Carlo tree search over hybrid beliefs with certified pruning.

One tree node per posterior mixture belief; action edges carry visit counts
and incremental-mean Q values; observation children are capped by progressive
widening.  Each expansion prunes the child belief with the configured
strategy and files the pruned mass into per-depth accumulators, from which
the root reports an a-priori and a (tighter) hindsight loss bound.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .belief import (
    Action,
    BeliefContractError,
    LikelihoodCollapseError,
    MixtureBelief,
    mixture_predict,
    mixture_reward,
    mixture_update,
)
from .env import GroundTruth, WorldModel, world_step
from .estimators import sample_proposal
from .pruning import (
    PruneBudget,
    Strategy,
    apply_strategy,
    apriori_bound,
    delta_from_epsilon,
    hindsight_bound,
    prune_k_best,
)


class PlannerStarvationError(RuntimeError):
    """The time budget expired before a single simulation completed."""


@dataclass(frozen=True)
class PlannerConfig:
    ucb_c: float = 5.0
    k_o: float = 3.0
    alpha_o: float = 0.5
    horizon_T: int = 10
    epsilon_bar: float = 0.0
    strategy: Strategy = field(default_factory=Strategy.none)
    time_budget: float = 1.0                 # seconds per planning call
    n_simulations: Optional[int] = None      # fixed count overrides the clock
    rollout_policy: str = "greedy_to_target"
    seed: int = 0
    n_state_samples: int = 16
    exec_max_hypotheses: int = 128

    def __post_init__(self):
        if self.ucb_c <= 0 or self.k_o <= 0 or not 0 < self.alpha_o < 1:
            raise ValueError("invalid UCB/widening parameters")
        if self.horizon_T < 1 or self.epsilon_bar < 0:
            raise ValueError("invalid horizon or loss budget")
        if self.rollout_policy not in ("greedy_to_target", "uniform_random"):
            raise ValueError(f"unknown rollout policy {self.rollout_policy!r}")


class ActionEdge:
    __slots__ = ("action", "n", "q", "children", "reward")

    def __init__(self, action: Action):
        self.action = action
        self.n = 0
        self.q = 0.0
        self.children: list[BeliefNode] = []
        self.reward: Optional[float] = None


class BeliefNode:
    __slots__ = ("belief", "depth", "n", "edges", "creation_delta")

    def __init__(self, belief: MixtureBelief, depth: int, creation_delta: float = 0.0):
        self.belief = belief
        self.depth = depth
        self.n = 0
        self.edges: dict[str, ActionEdge] = {}
        self.creation_delta = creation_delta


@dataclass
class PlanResult:
    best_action: Action
    q_table: dict[str, float]
    apriori: float
    hindsight: float
    n_simulations: int
    root: BeliefNode


class _Search:
    """Single planning session; owns the tree, rng, and bound accumulators."""

    def __init__(self, config: PlannerConfig, model: WorldModel):
        self.config = config
        self.model = model
        self.rng = np.random.default_rng(config.seed)
        self.delta = delta_from_epsilon(config.epsilon_bar, config.horizon_T, model.r_max)
        self.delta_sums = np.zeros(config.horizon_T + 1)
        self.n_sims = 0

    # -- action selection ---------------------------------------------------

    def _select_action(self, node: BeliefNode) -> ActionEdge:
        for action in self.model.actions:      # untried first, fixed order
            edge = node.edges.get(action.id)
            if edge is None or edge.n == 0:
                if edge is None:
                    edge = ActionEdge(action)
                    node.edges[action.id] = edge
                return edge
        log_n = np.log(node.n)
        best, best_score = None, -np.inf
        for action in self.model.actions:
            edge = node.edges[action.id]
            score = edge.q + self.config.ucb_c * np.sqrt(log_n / edge.n)
            if score > best_score:
                best, best_score = edge, score
        return best

    # -- rollout ------------------------------------------------------------

    def _rollout(self, belief: MixtureBelief, depth: int) -> float:
        total = 0.0
        b = belief
        for _ in range(depth):
            action = self._rollout_action(b)
            total += mixture_reward(b, action, self.model, self.config.n_state_samples,
                                    self.config.seed)
            b = mixture_predict(b, action, self.model)
        return total

    def _rollout_action(self, b: MixtureBelief) -> Action:
        if self.config.rollout_policy == "uniform_random":
            return self.model.actions[self.rng.integers(len(self.model.actions))]
        agent = b.means[b.max_weight_index(), :2]
        target = self.model.target
        best, best_d = None, np.inf
        for action in self.model.actions:
            d = float(np.linalg.norm(agent + action.displacement - target))
            if d < best_d:
                best, best_d = action, d
        return best

    # -- simulation ---------------------------------------------------------

    def simulate(self, node: BeliefNode, depth_remaining: int, path_deltas: dict) -> float:
        if depth_remaining == 0:
            return 0.0
        edge = self._select_action(node)
        limit = self.config.k_o * edge.n ** self.config.alpha_o
        if len(edge.children) <= limit:
            child = self._expand(node, edge)
            if edge.reward is None:
                edge.reward = mixture_reward(
                    node.belief, edge.action, self.model, self.config.n_state_samples,
                    self.config.seed,
                )
            path_deltas[child.depth] = path_deltas.get(child.depth, 0.0) + child.creation_delta
            R = edge.reward + self._rollout(child.belief, depth_remaining - 1)
        else:
            child = edge.children[self.rng.integers(len(edge.children))]
            path_deltas[child.depth] = path_deltas.get(child.depth, 0.0) + child.creation_delta
            R = edge.reward + self.simulate(child, depth_remaining - 1, path_deltas)
        node.n += 1
        edge.n += 1
        edge.q += (R - edge.q) / edge.n
        return R

    def _expand(self, node: BeliefNode, edge: ActionEdge) -> BeliefNode:
        sample = sample_proposal(node.belief, edge.action, self.model, self.rng)
        if sample is None:
            posterior = mixture_predict(node.belief, edge.action, self.model)
            receipt_delta = 0.0
        else:
            posterior = mixture_update(node.belief, edge.action, sample.z, self.model)
            posterior, receipt = apply_strategy(posterior, self.config.strategy, self.delta)
            receipt_delta = receipt.delta_step
        child = BeliefNode(posterior, node.depth + 1, receipt_delta)
        edge.children.append(child)
        return child


def plan(root_belief: MixtureBelief, config: PlannerConfig, model: WorldModel) -> PlanResult:
    """Search from the root until the budget expires; return the argmax action.

    The root belief is pruned once up front (its receipt is the depth-0 mass);
    per-depth pruned-mass running means across simulations feed the hindsight
    bound, which for the adaptive strategy never exceeds the a-priori bound.
    """
    search = _Search(config, model)
    pruned_root, root_receipt = apply_strategy(root_belief, config.strategy, search.delta)
    root = BeliefNode(pruned_root, 0, root_receipt.delta_step)

    deadline = time.perf_counter() + config.time_budget
    while True:
        if config.n_simulations is not None:
            if search.n_sims >= config.n_simulations:
                break
        elif search.n_sims > 0 and time.perf_counter() >= deadline:
            break
        path_deltas = {0: root.creation_delta}
        try:
            search.simulate(root, config.horizon_T, path_deltas)
        except LikelihoodCollapseError:
            continue                      # abort this simulation only
        for depth, d in path_deltas.items():
            search.delta_sums[depth] += d
        search.n_sims += 1
        if config.n_simulations is None and time.perf_counter() >= deadline:
            break
    if search.n_sims == 0:
        raise PlannerStarvationError("no simulation completed within the budget")

    best, best_q = None, -np.inf
    q_table = {}
    for action in model.actions:
        edge = root.edges.get(action.id)
        if edge is None or edge.n == 0:
            continue
        q_table[action.id] = edge.q
        if edge.q > best_q:
            best, best_q = action, edge.q

    budget = PruneBudget.from_epsilon(config.epsilon_bar, config.horizon_T, model.r_max)
    means = [(d, float(search.delta_sums[d] / search.n_sims))
             for d in range(config.horizon_T + 1)]
    hindsight = hindsight_bound(means, config.horizon_T, model.r_max)
    return PlanResult(
        best_action=best,
        q_table=q_table,
        apriori=apriori_bound(budget),
        hindsight=hindsight,
        n_simulations=search.n_sims,
        root=root,
    )


# ---------------------------------------------------------------------------
# Receding-horizon episode

@dataclass
class StepRecord:
    step: int
    action: str
    reward: float
    n_hypotheses: int
    delta_step: float
    apriori_bound: float
    hindsight_bound: float
    plan_wallclock_ms: float
    true_pos: tuple[float, float] = (0.0, 0.0)
    target_index: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "step": self.step,
                "action": self.action,
                "reward": self.reward,
                "n_hypotheses": self.n_hypotheses,
                "delta_step": self.delta_step,
                "apriori_bound": self.apriori_bound,
                "hindsight_bound": self.hindsight_bound,
                "plan_wallclock_ms": self.plan_wallclock_ms,
            }
        )


@dataclass
class EpisodeTrace:
    records: list[StepRecord]
    waypoint_reached_step: dict[int, int]
    final_belief: MixtureBelief

    def to_jsonl(self) -> str:
        return "\n".join(r.to_json() for r in self.records)

    def reached(self, waypoint_index: int) -> bool:
        return waypoint_index in self.waypoint_reached_step


def run_episode(
    gt: GroundTruth,
    root_belief: MixtureBelief,
    config: PlannerConfig,
    model: WorldModel,
    n_steps: int,
) -> EpisodeTrace:
    """Plan, execute the first action, observe, update; repeat for n_steps.

    The active target advances whenever the true agent position comes within
    the waypoint radius of it.  The execution belief is pruned with the
    configured strategy after every update and additionally capped at
    ``exec_max_hypotheses`` components so unpruned solvers stay bounded.
    """
    belief = root_belief.copy()
    gt = gt.copy()
    records: list[StepRecord] = []
    reached: dict[int, int] = {}
    delta = delta_from_epsilon(config.epsilon_bar, config.horizon_T, model.r_max)

    def advance_target(step: int):
        nonlocal model
        while np.linalg.norm(gt.agent_pos - model.target) <= model.waypoint_radius:
            reached.setdefault(model.active_target_index, step)
            if model.active_target_index + 1 < len(model.targets):
                model = model.with_active_target(model.active_target_index + 1)
            else:
                break

    advance_target(0)
    for step in range(n_steps):
        t0 = time.perf_counter()
        result = plan(belief, config, model)
        plan_ms = (time.perf_counter() - t0) * 1e3
        action = result.best_action

        reward = mixture_reward(belief, action, model, config.n_state_samples, config.seed)
        gt, z, _ = world_step(gt, action, model)
        updated = None
        if z is not None:
            try:
                updated = mixture_update(belief, action, z, model)
            except (BeliefContractError, LikelihoodCollapseError):
                updated = None            # belief gate disagrees with the simulator's
        if updated is None:
            belief = mixture_predict(belief, action, model)
            delta_step = 0.0
        else:
            belief, receipt = apply_strategy(updated, config.strategy, delta)
            delta_step = receipt.delta_step
            if belief.n_components > config.exec_max_hypotheses:
                belief, cap_receipt = prune_k_best(belief, config.exec_max_hypotheses)
                delta_step += cap_receipt.delta_step

        advance_target(step + 1)
        records.append(
            StepRecord(
                step=step,
                action=action.id,
                reward=reward,
                n_hypotheses=belief.n_components,
                delta_step=delta_step,
                apriori_bound=result.apriori,
                hindsight_bound=result.hindsight,
                plan_wallclock_ms=plan_ms,
                true_pos=(float(gt.agent_pos[0]), float(gt.agent_pos[1])),
                target_index=model.active_target_index,
            )
        )
    return EpisodeTrace(records, reached, belief)
