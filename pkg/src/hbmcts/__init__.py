"""Hybrid-belief MCTS under ambiguous data association, with certified pruning."""

from .belief import (
    Action,
    BeliefContractError,
    ConditionalBelief,
    DegenerateCovarianceError,
    Label,
    LikelihoodCollapseError,
    MixtureBelief,
    admissible_associations,
    component_reward,
    conditional_update,
    kalman_update,
    log_predictive_density,
    mixture_predict,
    mixture_reward,
    mixture_update,
    predict,
    predictive_moments,
)
from .env import (
    ACTION_IDS,
    ConfigError,
    GroundTruth,
    PRESETS,
    WorldModel,
    exact_expected_reward,
    exact_mixture_reward,
    expected_clamped_distance,
    make_actions,
    make_world,
    reward_fn,
    world_step,
)
from .estimators import (
    DepthPruneStats,
    ProposalSample,
    SNResult,
    bound_estimate,
    mc_expected_reward,
    mc_rollouts,
    sample_proposal,
    sn_expected_reward,
    sn_expected_reward_pruned,
    sn_value_pair,
)
from .oracle import (
    TinyPOMDP,
    enumerate_policies,
    exact_value,
    exact_value_pruned,
    optimal_regret_check,
    random_tiny,
    single_hypothesis_value,
)
from .planner import (
    EpisodeTrace,
    PlanResult,
    PlannerConfig,
    PlannerStarvationError,
    StepRecord,
    plan,
    run_episode,
)
from .pruning import (
    NO_OP_RECEIPT,
    PruneBudget,
    PruneReceipt,
    Strategy,
    apply_strategy,
    apriori_bound,
    delta_from_epsilon,
    hindsight_bound,
    prune_adaptive,
    prune_k_best,
    prune_threshold,
)

__version__ = "0.1.0"
