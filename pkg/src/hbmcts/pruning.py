"""Hypothesis-set reduction with loss receipts and a-priori/hindsight bounds.

Three strategies are supported: an adaptive scheme that prunes up to a
per-step mass budget derived from a user-set value-loss budget, a fixed-count
scheme, and a weight-threshold scheme.  Every prune emits a receipt carrying
the exact discarded mass so loss bounds can be reported after the fact.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .belief import Label, MixtureBelief


@dataclass(frozen=True)
class PruneBudget:
    """Per-step prunable-mass budget derived from a total value-loss budget."""

    epsilon_bar: float
    horizon_T: int
    r_max: float
    delta: float

    @classmethod
    def from_epsilon(cls, epsilon_bar: float, horizon_T: int, r_max: float) -> "PruneBudget":
        return cls(
            epsilon_bar=epsilon_bar,
            horizon_T=horizon_T,
            r_max=r_max,
            delta=delta_from_epsilon(epsilon_bar, horizon_T, r_max),
        )


@dataclass(frozen=True)
class PruneReceipt:
    """Record of one pruning event: discarded mass and which labels went."""

    delta_step: float
    pruned_labels: tuple[Label, ...]

    @property
    def pruned_label_count(self) -> int:
        return len(self.pruned_labels)


NO_OP_RECEIPT = PruneReceipt(0.0, ())


@dataclass(frozen=True)
class Strategy:
    """Pruning strategy selector: none | adaptive | k_best | threshold."""

    kind: str
    k: int = 1
    p_thresh: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "adaptive", "k_best", "threshold"):
            raise ValueError(f"unknown pruning strategy {self.kind!r}")

    @classmethod
    def none(cls) -> "Strategy":
        return cls("none")

    @classmethod
    def adaptive(cls) -> "Strategy":
        return cls("adaptive")

    @classmethod
    def k_best(cls, k: int) -> "Strategy":
        return cls("k_best", k=k)

    @classmethod
    def threshold(cls, p: float) -> "Strategy":
        return cls("threshold", p_thresh=p)


def delta_from_epsilon(epsilon_bar: float, horizon_T: int, r_max: float) -> float:
    """Per-step mass budget: 2 eps / (r_max (T^2 + 3T)), clamped to [0, 1]."""
    if r_max <= 0:
        raise ValueError("r_max must be positive")
    if horizon_T < 1:
        raise ValueError("horizon_T must be >= 1")
    delta = 2.0 * epsilon_bar / (r_max * (horizon_T**2 + 3 * horizon_T))
    return float(min(max(delta, 0.0), 1.0))


def _ascending_weight_order(b: MixtureBelief) -> list[int]:
    return sorted(range(b.n_components), key=lambda i: (b.log_weights[i], b.labels[i]))


def _descending_weight_order(b: MixtureBelief) -> list[int]:
    # highest weight first; ties keep the lexicographically smaller label first
    return sorted(range(b.n_components), key=lambda i: (-b.log_weights[i], b.labels[i]))


def _drop(b: MixtureBelief, drop_idx: Iterable[int]) -> tuple[MixtureBelief, PruneReceipt]:
    drop = sorted(set(drop_idx))
    if not drop:
        return b.copy(), NO_OP_RECEIPT
    keep = [i for i in range(b.n_components) if i not in set(drop)]
    w = b.weights
    delta_step = float(np.sum(w[drop]))
    pruned_labels = tuple(b.labels[i] for i in drop)
    out = MixtureBelief(
        [b.labels[i] for i in keep],
        b.log_weights[keep],
        b.means[keep],
        b.covs[keep],
        b.history_len,
    )
    out.normalize()
    return out, PruneReceipt(delta_step, pruned_labels)


def prune_adaptive(b: MixtureBelief, delta: float) -> tuple[MixtureBelief, PruneReceipt]:
    """Greedily prune smallest-weight components while the total stays <= delta.

    At least one component always survives; ties break on lexicographic label
    order so runs are reproducible.
    """
    if delta <= 0:
        return b.copy(), NO_OP_RECEIPT
    order = _ascending_weight_order(b)
    w = b.weights
    drop = []
    cum = 0.0
    for i in order[: b.n_components - 1]:  # always keep one survivor
        if cum + w[i] <= delta:
            cum += w[i]
            drop.append(i)
        else:
            break
    return _drop(b, drop)


def prune_k_best(b: MixtureBelief, k: int) -> tuple[MixtureBelief, PruneReceipt]:
    """Keep the k highest-weight components (ties by label order)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= b.n_components:
        return b.copy(), NO_OP_RECEIPT
    keep = set(_descending_weight_order(b)[:k])
    return _drop(b, [i for i in range(b.n_components) if i not in keep])


def prune_threshold(b: MixtureBelief, p_thresh: float) -> tuple[MixtureBelief, PruneReceipt]:
    """Prune components with weight strictly below the threshold.

    If everything falls below, the single max-weight component survives.
    """
    if not 0.0 <= p_thresh < 1.0:
        raise ValueError("p_thresh must be in [0, 1)")
    w = b.weights
    drop = [i for i in range(b.n_components) if w[i] < p_thresh]
    if len(drop) == b.n_components:
        drop.remove(_descending_weight_order(b)[0])
    return _drop(b, drop)


def apply_strategy(
    b: MixtureBelief, strategy: Strategy, delta: float = 0.0
) -> tuple[MixtureBelief, PruneReceipt]:
    """Dispatch to the configured strategy (``delta`` feeds the adaptive one)."""
    if strategy.kind == "none":
        return b.copy(), NO_OP_RECEIPT
    if strategy.kind == "adaptive":
        return prune_adaptive(b, delta)
    if strategy.kind == "k_best":
        return prune_k_best(b, strategy.k)
    return prune_threshold(b, strategy.p_thresh)


def apriori_bound(budget: PruneBudget) -> float:
    """Guaranteed worst-case value loss when every step prunes <= delta mass."""
    T = budget.horizon_T
    return budget.r_max * budget.delta * (T**2 + 3 * T) / 2.0


def hindsight_bound(
    deltas_by_depth: Sequence[tuple[int, float]], horizon_T: int, r_max: float
) -> float:
    """Post-hoc loss bound from the mass actually pruned at each depth.

    Closed form of the cumulative double sum:
    r_max * [T * d_0 + sum_{tau=1}^{T} (T - tau + 1) * d_tau].
    """
    total = 0.0
    for depth, d in deltas_by_depth:
        if not 0 <= depth <= horizon_T:
            raise ValueError(f"depth {depth} outside [0, {horizon_T}]")
        coeff = horizon_T if depth == 0 else horizon_T - depth + 1
        total += coeff * d
    return r_max * total
