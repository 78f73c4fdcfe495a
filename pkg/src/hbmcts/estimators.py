"""Value estimation over the hypothesis tree.

Three estimators are provided: a naive Monte-Carlo baseline (which collapses
to a single hypothesis per sampled branch), a self-normalized importance
sampling (SN) estimator that keeps every hypothesis alive at every sampled
observation, and a pruned SN estimator evaluated on the surviving hypotheses
only.  The full and pruned SN estimators are computed in one pass over the
same sampled observations, which is what makes their gap deterministically
bounded by the pruned-mass receipts.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .belief import (
    Action,
    Label,
    LikelihoodCollapseError,
    MixtureBelief,
    component_reward,
    kalman_update,
    log_predictive_density,
    mixture_reward,
    predictive_moments,
    _batched_logpdf_2d,
    _predict_arrays,
)
from .pruning import Strategy, apply_strategy, hindsight_bound


@dataclass(frozen=True)
class ProposalSample:
    """One observation drawn from the mixture proposal.

    ``per_hypothesis_log_density`` maps extended labels (parent label plus the
    new association id) to the log predictive density of ``z`` under that
    hypothesis; ``log_q`` is the log of the weighted mixture of those
    densities, i.e. the exact proposal density at ``z``.
    """

    z: np.ndarray
    log_q: float
    per_hypothesis_log_density: dict[Label, float]

    @property
    def proposal_density(self) -> float:
        return float(np.exp(self.log_q))

    def importance_weight(self, label: Label) -> float:
        return float(np.exp(self.per_hypothesis_log_density[label] - self.log_q))


@dataclass(frozen=True)
class DepthPruneStats:
    """Pruned mass aggregated over all tree nodes at one depth."""

    depth: int
    delta_step: float
    pruned_label_count: int


@dataclass(frozen=True)
class SNResult:
    value_full: float
    value_pruned: float
    receipts: tuple[DepthPruneStats, ...]


def _gated_assocs(model, means, logbw) -> tuple[int, ...]:
    if model.assoc_gate_radius is None:
        return tuple(range(model.n_landmarks))
    i = int(np.argmax(logbw))
    agent = means[i, :2]
    lms = means[i, 2:].reshape(-1, 2)
    return model.gated_sources(agent, lms)


def _draw_observation(rng, model, zmean, Scov):
    """One observation from a single (component, association) predictive."""
    if model.obs_support is not None:
        logp = np.array(
            [_batched_logpdf_2d(zk, zmean[None, :], Scov[None, :, :])[0] for zk in model.obs_support]
        )
        pmf = np.exp(logp - logsumexp(logp))
        idx = rng.choice(len(model.obs_support), p=pmf / pmf.sum())
        return model.obs_support[idx].copy()
    chol = np.linalg.cholesky(Scov)
    return zmean + chol @ rng.standard_normal(2)


def sample_proposal(b: MixtureBelief, action: Action, model, rng) -> ProposalSample:
    """Draw one observation from the survivor-weighted predictive mixture.

    Returns None when the association gate admits no source (nothing to
    observe from this belief).
    """
    means, covs = _predict_arrays(b.means, b.covs, action, model)
    assocs = _gated_assocs(model, means, b.log_weights)
    if not assocs:
        return None
    log_prior = -np.log(len(assocs))

    i = rng.choice(b.n_components, p=b.weights / b.weights.sum())
    j = assocs[rng.integers(len(assocs))]
    zmeans, Scovs = predictive_moments(means, covs, model, j)
    z = _draw_observation(rng, model, zmeans[i], Scovs[i])

    per_hyp: dict[Label, float] = {}
    parts = []
    for jj in assocs:
        logp = log_predictive_density(means, covs, model, jj, z)
        for idx, lab in enumerate(b.labels):
            per_hyp[lab + (jj,)] = float(logp[idx])
        parts.append(b.log_weights + log_prior + logp)
    log_q = float(logsumexp(np.concatenate(parts)))
    return ProposalSample(z=z, log_q=log_q, per_hypothesis_log_density=per_hyp)


# ---------------------------------------------------------------------------
# Monte-Carlo baseline (single hypothesis per sampled branch)

def mc_rollouts(
    b: MixtureBelief,
    actions: Sequence[Action],
    model,
    n_rollouts: int,
    seed: int,
    n_state_samples: int = 64,
):
    """Yield ``(label_chain, value)`` per rollout of the naive MC estimator."""
    rng = np.random.default_rng(seed)
    for _ in range(n_rollouts):
        i = rng.choice(b.n_components, p=b.weights / b.weights.sum())
        label = b.labels[i]
        mean, cov = b.means[i].copy(), b.covs[i].copy()
        value = component_reward(mean, cov, label, model, n_state_samples, seed)
        chain = [label]
        for action in actions:
            m2, c2 = _predict_arrays(mean[None, :], cov[None, :, :], action, model)
            mean, cov = m2[0], c2[0]
            assocs = _gated_assocs(model, mean[None, :], np.zeros(1))
            j = assocs[rng.integers(len(assocs))]
            zmeans, Scovs = predictive_moments(mean[None, :], cov[None, :, :], model, j)
            z = _draw_observation(rng, model, zmeans[0], Scovs[0])
            mean, cov, _ = kalman_update(mean, cov, z, model.obs_matrix(j), model.obs_noise_cov)
            label = label + (j,)
            chain.append(label)
            value += component_reward(mean, cov, label, model, n_state_samples, seed)
        yield chain, value


def mc_expected_reward(
    b: MixtureBelief,
    actions: Sequence[Action],
    model,
    n_rollouts: int,
    seed: int,
    n_state_samples: int = 64,
) -> float:
    """Naive MC value estimate; each rollout commits to one association chain."""
    if len(actions) == 0:
        return mixture_reward(b, None, model, n_state_samples, seed)
    vals = [v for _, v in mc_rollouts(b, actions, model, n_rollouts, seed, n_state_samples)]
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# Paired SN estimation (full and pruned share every sampled observation)

class _Side:
    __slots__ = ("labels", "logpw", "means", "covs")

    def __init__(self, labels, logpw, means, covs):
        self.labels = labels
        self.logpw = np.asarray(logpw, dtype=float)
        self.means = means
        self.covs = covs


def sn_value_pair(
    b: MixtureBelief,
    actions: Sequence[Action],
    model,
    n_obs_per_step: Union[int, Sequence[int]],
    strategy: Strategy,
    seed: int,
    n_state_samples: int = 256,
    delta: float = 0.0,
    use_exact_rewards: bool = False,
) -> SNResult:
    """Evaluate the full and pruned SN value estimates on shared samples.

    The immediate reward at the root is evaluated once on the full belief and
    enters both values; from depth 1 on, the full side sums over every
    hypothesis while the pruned side sums over survivors of the configured
    strategy.  Receipts carry, per depth, the SN-weighted mass of pruned
    path weights summed over all nodes at that depth, which is exactly the
    quantity the hindsight bound needs.
    """
    T = len(actions)
    if T < 1:
        raise ValueError("at least one action is required")
    widths = [n_obs_per_step] * T if np.isscalar(n_obs_per_step) else list(n_obs_per_step)
    if len(widths) != T or any(w < 1 for w in widths):
        raise ValueError("need one positive sample count per step")

    if use_exact_rewards:
        from .env import exact_expected_reward, exact_mixture_reward

        def reward_of(mean, cov, label):
            return exact_expected_reward(mean, cov, model.target, model.d_max)

        r0 = exact_mixture_reward(b, model)
    else:
        def reward_of(mean, cov, label):
            return component_reward(mean, cov, label, model, n_state_samples, seed)

        r0 = mixture_reward(b, actions[0], model, n_state_samples, seed)
    rng = np.random.default_rng(seed)

    pruned_root, receipt0 = apply_strategy(b, strategy, delta)
    keep = {lab: i for i, lab in enumerate(b.labels)}
    surv_idx = [keep[lab] for lab in pruned_root.labels]

    full = _Side(list(b.labels), b.log_weights.copy(), b.means.copy(), b.covs.copy())
    pruned = _Side(
        list(pruned_root.labels),
        b.log_weights[surv_idx].copy(),  # restricted, not renormalized
        b.means[surv_idx].copy(),
        b.covs[surv_idx].copy(),
    )
    logbw = pruned_root.log_weights.copy()

    sn_drop = np.zeros(T + 1)
    drop_counts = np.zeros(T + 1, dtype=int)
    sn_drop[0] = receipt0.delta_step
    drop_counts[0] = receipt0.pruned_label_count

    acc = {"full": 0.0, "pruned": 0.0}
    _recurse_sn(
        0, full, pruned, logbw, actions, widths, model, strategy, delta, rng,
        reward_of, acc, sn_drop, drop_counts,
    )
    receipts = tuple(
        DepthPruneStats(d, float(sn_drop[d]), int(drop_counts[d])) for d in range(T + 1)
    )
    return SNResult(value_full=r0 + acc["full"], value_pruned=r0 + acc["pruned"], receipts=receipts)


def _recurse_sn(
    t, full, pruned, logbw, actions, widths, model, strategy, delta, rng,
    reward_of, acc, sn_drop, drop_counts,
):
    T = len(actions)
    if t == T:
        return
    action = actions[t]
    m = widths[t]

    fmeans, fcovs = _predict_arrays(full.means, full.covs, action, model)
    pmeans, pcovs = _predict_arrays(pruned.means, pruned.covs, action, model)
    assocs = _gated_assocs(model, pmeans, logbw)
    if not assocs:
        raise LikelihoodCollapseError("association gate admits no source")
    log_prior = -np.log(len(assocs))
    nA = len(assocs)
    n_f, n_p = len(full.labels), len(pruned.labels)

    pred_p = {j: predictive_moments(pmeans, pcovs, model, j) for j in assocs}

    # draw the shared observation set from the pruned-belief proposal
    bw = np.exp(logbw - logsumexp(logbw))
    zs = []
    for _ in range(m):
        i = rng.choice(n_p, p=bw / bw.sum())
        j = assocs[rng.integers(nA)]
        zm, Sc = pred_p[j]
        zs.append(_draw_observation(rng, model, zm[i], Sc[i]))

    # per-sample log densities: (m, n_side) per association
    logp_f = {j: np.stack([log_predictive_density(fmeans, fcovs, model, j, z) for z in zs])
              for j in assocs}
    logp_p = {j: np.stack([log_predictive_density(pmeans, pcovs, model, j, z) for z in zs])
              for j in assocs}
    log_q = logsumexp(
        np.stack([logbw[None, :] + log_prior + logp_p[j] for j in assocs], axis=0),
        axis=(0, 2),
    )  # (m,)

    # per-(hypothesis, association) SN normalizers over the m samples
    logw_f = {j: logp_f[j] - log_q[:, None] for j in assocs}
    logw_p = {j: logp_p[j] - log_q[:, None] for j in assocs}
    norm_f = {j: logsumexp(logw_f[j], axis=0) for j in assocs}
    norm_p = {j: logsumexp(logw_p[j], axis=0) for j in assocs}
    if any(not np.all(np.isfinite(norm_f[j])) for j in assocs):
        raise LikelihoodCollapseError("all importance weights vanished for a hypothesis")

    # posterior moments per association, batched over components
    post_f = {j: _batched_posterior(fmeans, fcovs, model, j, zs) for j in assocs}
    post_p = {j: _batched_posterior(pmeans, pcovs, model, j, zs) for j in assocs}

    for k in range(m):
        # ---- full child ----
        c_labels = []
        c_logpw = np.empty(n_f * nA)
        c_means = np.empty((n_f * nA, full.means.shape[1]))
        c_covs = np.empty((n_f * nA, full.means.shape[1], full.means.shape[1]))
        for jj, j in enumerate(assocs):
            sl = slice(jj * n_f, (jj + 1) * n_f)
            c_logpw[sl] = full.logpw + log_prior + logw_f[j][k] - norm_f[j]
            mk, ck = post_f[j]
            c_means[sl] = mk[k]
            c_covs[sl] = ck[k]
            c_labels.extend(lab + (j,) for lab in full.labels)
        child_full = _Side(c_labels, c_logpw, c_means, c_covs)

        rewards = {
            lab: reward_of(c_means[i], c_covs[i], lab) for i, lab in enumerate(c_labels)
        }
        acc["full"] += float(np.sum(np.exp(c_logpw) * np.array([rewards[lab] for lab in c_labels])))

        # ---- pruned child (pre-prune) ----
        p_labels = []
        p_logpw = np.empty(n_p * nA)
        p_logbw = np.empty(n_p * nA)
        p_means = np.empty((n_p * nA, pruned.means.shape[1]))
        p_covs = np.empty((n_p * nA, pruned.means.shape[1], pruned.means.shape[1]))
        for jj, j in enumerate(assocs):
            sl = slice(jj * n_p, (jj + 1) * n_p)
            p_logpw[sl] = pruned.logpw + log_prior + logw_p[j][k] - norm_p[j]
            p_logbw[sl] = logbw + log_prior + logp_p[j][k]
            mk, ck = post_p[j]
            p_means[sl] = mk[k]
            p_covs[sl] = ck[k]
            p_labels.extend(lab + (j,) for lab in pruned.labels)
        if not np.any(np.isfinite(p_logbw)):
            raise LikelihoodCollapseError("total likelihood collapse on pruned side")
        p_logbw = p_logbw - logsumexp(p_logbw)

        bayes_child = MixtureBelief(p_labels, p_logbw.copy(), p_means, p_covs, t + 1)
        _, receipt = apply_strategy(bayes_child, strategy, delta)
        dropped = set(receipt.pruned_labels)
        keep_idx = [i for i, lab in enumerate(p_labels) if lab not in dropped]
        drop_idx = [i for i, lab in enumerate(p_labels) if lab in dropped]
        sn_drop[t + 1] += float(np.sum(np.exp(p_logpw[drop_idx]))) if drop_idx else 0.0
        drop_counts[t + 1] += len(drop_idx)

        child_pruned = _Side(
            [p_labels[i] for i in keep_idx], p_logpw[keep_idx], p_means[keep_idx], p_covs[keep_idx]
        )
        child_logbw = p_logbw[keep_idx] - logsumexp(p_logbw[keep_idx])
        acc["pruned"] += float(
            np.sum(
                np.exp(child_pruned.logpw)
                * np.array([rewards[lab] for lab in child_pruned.labels])
            )
        )

        _recurse_sn(
            t + 1, child_full, child_pruned, child_logbw, actions, widths, model, strategy,
            delta, rng, reward_of, acc, sn_drop, drop_counts,
        )


def _batched_posterior(means, covs, model, assoc: int, zs):
    """Kalman posteriors for every component against every sampled z."""
    H = model.obs_matrix(assoc)
    zmeans, Scovs = predictive_moments(means, covs, model, assoc)
    Sinv = np.linalg.inv(Scovs)
    K = covs @ H.T @ Sinv                       # (n, d, 2)
    post_cov = covs - K @ Scovs @ np.transpose(K, (0, 2, 1))
    post_cov = 0.5 * (post_cov + np.transpose(post_cov, (0, 2, 1)))
    out_means = []
    for z in zs:
        innov = np.asarray(z) - zmeans          # (n, 2)
        out_means.append(means + np.einsum("nij,nj->ni", K, innov))
    n = means.shape[0]
    return np.stack(out_means), np.broadcast_to(post_cov, (len(zs), n, *post_cov.shape[1:])).copy()


# ---------------------------------------------------------------------------
# Public estimator surfaces

def sn_expected_reward(
    b: MixtureBelief,
    actions: Sequence[Action],
    model,
    n_obs_per_step,
    seed: int,
    n_state_samples: int = 256,
) -> float:
    """Full-hypothesis SN value estimate."""
    res = sn_value_pair(b, actions, model, n_obs_per_step, Strategy.none(), seed, n_state_samples)
    return res.value_full


def sn_expected_reward_pruned(
    b: MixtureBelief,
    actions: Sequence[Action],
    model,
    n_obs_per_step,
    strategy: Strategy,
    seed: int,
    n_state_samples: int = 256,
    delta: float = 0.0,
) -> tuple[float, tuple[DepthPruneStats, ...]]:
    """Pruned SN value estimate plus per-depth pruned-mass receipts.

    Shares its sampled observations with the full estimate computed in the
    same pass (see :func:`sn_value_pair` for both numbers at once).
    """
    res = sn_value_pair(b, actions, model, n_obs_per_step, strategy, seed, n_state_samples, delta)
    return res.value_pruned, res.receipts


def bound_estimate(
    receipts_by_depth: Sequence[DepthPruneStats], horizon_T: int, r_max: float
) -> float:
    """Deterministic bound on |full - pruned| from the pruning receipts."""
    return hindsight_bound(
        [(s.depth, s.delta_step) for s in receipts_by_depth], horizon_T, r_max
    )
