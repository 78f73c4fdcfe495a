"""Benchmark worlds: linear-Gaussian models with ambiguous landmark observations.

The state is the agent position stacked with every landmark position, jointly
Gaussian per hypothesis.  Observations are relative landmark positions whose
source is never revealed to the agent.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import fixed_quad
from scipy.special import hyp1f1
from scipy.stats import rice

from .belief import Action, ConditionalBelief, MixtureBelief


class ConfigError(ValueError):
    """An invalid world preset, override, or experiment configuration."""


ACTION_IDS = ("up", "down", "left", "right")
_ACTION_DIRS = {
    "up": np.array([0.0, 1.0]),
    "down": np.array([0.0, -1.0]),
    "left": np.array([-1.0, 0.0]),
    "right": np.array([1.0, 0.0]),
}


def make_actions(step_size: float) -> tuple[Action, ...]:
    return tuple(Action(aid, _ACTION_DIRS[aid] * step_size) for aid in ACTION_IDS)


@dataclass(frozen=True, eq=False)
class WorldModel:
    """Immutable model: motion/observation noise, landmarks, targets, reward."""

    landmark_means: np.ndarray          # (L, 2)
    landmark_prior_cov: np.ndarray      # (L, 2, 2)
    step_size: float
    process_noise_cov: np.ndarray       # (2, 2)
    obs_noise_cov: np.ndarray           # (2, 2)
    targets: np.ndarray                 # (M, 2), ordered
    d_max: float
    active_target_index: int = 0
    assoc_gate_radius: Optional[float] = None
    obs_support: Optional[np.ndarray] = None   # (K, 2) discrete observation set
    waypoint_radius: float = 1.0

    def __post_init__(self):
        for name in ("landmark_means", "landmark_prior_cov", "process_noise_cov",
                     "obs_noise_cov", "targets"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.obs_support is not None:
            object.__setattr__(self, "obs_support", np.asarray(self.obs_support, dtype=float))
        if self.n_landmarks < 1:
            raise ConfigError("at least one landmark/source is required")
        if self.d_max <= 0:
            raise ConfigError("d_max must be positive")

    @property
    def n_landmarks(self) -> int:
        return self.landmark_means.shape[0]

    @property
    def state_dim(self) -> int:
        return 2 + 2 * self.n_landmarks

    @property
    def r_max(self) -> float:
        return self.d_max

    @property
    def target(self) -> np.ndarray:
        return self.targets[self.active_target_index]

    @property
    def actions(self) -> tuple[Action, ...]:
        return make_actions(self.step_size)

    def with_active_target(self, index: int) -> "WorldModel":
        return dataclasses.replace(self, active_target_index=index)

    def obs_matrix(self, assoc: int) -> np.ndarray:
        """z = landmark_assoc - agent + noise."""
        H = np.zeros((2, self.state_dim))
        H[:, :2] = -np.eye(2)
        H[:, 2 + 2 * assoc : 4 + 2 * assoc] = np.eye(2)
        return H

    def reward_of_positions(self, agent_xy: np.ndarray) -> np.ndarray:
        return reward_fn(agent_xy, self.target, self.d_max)

    def gated_sources(self, agent_xy, landmark_xy) -> tuple[int, ...]:
        """Sources within the association gate of ``agent_xy`` (all if ungated)."""
        if self.assoc_gate_radius is None:
            return tuple(range(self.n_landmarks))
        d = np.linalg.norm(np.asarray(landmark_xy) - np.asarray(agent_xy), axis=1)
        return tuple(int(j) for j in np.flatnonzero(d <= self.assoc_gate_radius))


@dataclass
class GroundTruth:
    """Simulator-owned true state; landmark positions are fixed per episode."""

    agent_pos: np.ndarray
    landmark_pos: np.ndarray
    rng: np.random.Generator

    def copy(self) -> "GroundTruth":
        return GroundTruth(self.agent_pos.copy(), self.landmark_pos.copy(), self.rng)


def reward_fn(agent_xy, target, d_max: float):
    """Negative Euclidean distance to the target, clamped at ``d_max``."""
    agent_xy = np.asarray(agent_xy, dtype=float)
    d = np.linalg.norm(agent_xy - np.asarray(target, dtype=float), axis=-1)
    return -np.minimum(d, d_max)


def world_step(gt: GroundTruth, action: Action, model: WorldModel):
    """Advance the true state one step and emit an unlabeled observation.

    The true association is drawn from the (gated) uniform association prior
    and is not revealed.  Returns ``(gt', observation or None, true_assoc)``;
    the observation is None when no source passes the gate.
    """
    agent = gt.agent_pos + action.displacement
    agent = agent + gt.rng.multivariate_normal(np.zeros(2), model.process_noise_cov)
    new_gt = GroundTruth(agent, gt.landmark_pos, gt.rng)
    sources = model.gated_sources(agent, gt.landmark_pos)
    if not sources:
        return new_gt, None, None
    assoc = int(sources[gt.rng.integers(len(sources))])
    z = gt.landmark_pos[assoc] - agent
    z = z + gt.rng.multivariate_normal(np.zeros(2), model.obs_noise_cov)
    return new_gt, z, assoc


# ---------------------------------------------------------------------------
# Exact expected reward (closed form / quadrature), used as the oracle route.

def expected_clamped_distance(mean, cov, target, d_max: float) -> float:
    """E[min(||p - t||, d_max)] for p ~ N(mean, cov) in 2D.

    Isotropic covariances (the invariant in these worlds) use the Rice
    distribution: closed-form mean when the clamp is inactive, quadrature on
    the survival function otherwise.  Anisotropic input falls back to
    Gauss-Hermite quadrature.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    nu = float(np.linalg.norm(mean - np.asarray(target, dtype=float)))
    scale = max(1.0, float(np.abs(cov).max()))
    iso = (
        abs(cov[0, 1]) <= 1e-9 * scale
        and abs(cov[1, 0]) <= 1e-9 * scale
        and abs(cov[0, 0] - cov[1, 1]) <= 1e-9 * scale
    )
    if not iso:
        return _expected_clamped_distance_gh(mean, cov, target, d_max)
    sigma = float(np.sqrt(max(cov[0, 0], 0.0)))
    if sigma == 0.0:
        return min(nu, d_max)
    if nu + 10.0 * sigma <= d_max:
        # Rice mean: sigma * sqrt(pi/2) * 1F1(-1/2; 1; -nu^2 / (2 sigma^2))
        return float(sigma * np.sqrt(np.pi / 2.0) * hyp1f1(-0.5, 1.0, -nu * nu / (2.0 * sigma * sigma)))
    # E[min(R, d)] = integral_0^d (1 - F(r)) dr
    val, _ = fixed_quad(
        lambda r: 1.0 - rice.cdf(r, nu / sigma, scale=sigma), 0.0, d_max, n=200
    )
    return float(val)


def _expected_clamped_distance_gh(mean, cov, target, d_max, order: int = 48) -> float:
    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    L = np.linalg.cholesky(cov + 1e-15 * np.eye(2))
    gx, gy = np.meshgrid(nodes, nodes)
    pts = mean + np.stack([gx.ravel(), gy.ravel()], axis=1) @ L.T
    w = np.outer(weights, weights).ravel() / (2.0 * np.pi)
    d = np.minimum(np.linalg.norm(pts - np.asarray(target), axis=1), d_max)
    return float(np.sum(w * d))


def exact_expected_reward(mean, cov, target, d_max: float) -> float:
    """Exact counterpart of the sampled per-hypothesis reward."""
    return -expected_clamped_distance(np.asarray(mean)[:2], np.asarray(cov)[:2, :2], target, d_max)


def exact_mixture_reward(b: MixtureBelief, model: WorldModel) -> float:
    w = b.weights
    return float(
        sum(
            w[i] * exact_expected_reward(b.means[i], b.covs[i], model.target, model.d_max)
            for i in range(b.n_components)
        )
    )


# ---------------------------------------------------------------------------
# Presets

_TWO_LANDMARK_DEFAULTS = {
    "agent_start": (0.0, 0.0),
    "landmarks": ((4.0, 2.0), (4.0, -2.0)),
    "targets": ((8.0, 0.0),),
    "process_noise": 0.05,
    "obs_noise": 0.1,
    "landmark_prior": 0.5,
    "agent_prior": 0.5,
    "step_size": 1.0,
    "d_max": 50.0,
    "gate_radius": None,
    "waypoint_radius": 1.0,
    "single_hypothesis_root": False,
    "root_hypothesis_offset": (0.0, 1.0),
    "freeze_landmarks": False,
    "n_landmarks": None,            # override to 1 for the degenerate case
}

_WAYPOINT_DEFAULTS = dict(_TWO_LANDMARK_DEFAULTS)
_WAYPOINT_DEFAULTS.update(
    {
        "targets": ((20.0, 0.0), (20.0, 20.0), (0.0, 20.0)),
        "landmark_offset": 2.0,
        "gate_radius": 10.0,
        "waypoint_radius": 2.0,
        "landmarks": None,          # derived from targets unless overridden
    }
)

PRESETS = ("two_landmark", "waypoint_course")


def _waypoint_landmarks(targets, offset: float):
    """One ambiguous pair per waypoint, offset perpendicular to the approach axis."""
    targets = np.asarray(targets, dtype=float)
    prev = np.zeros(2)
    lms = []
    for t in targets:
        axis = t - prev
        n = np.linalg.norm(axis)
        axis = axis / n if n > 0 else np.array([1.0, 0.0])
        perp = np.array([-axis[1], axis[0]])
        lms.append(t + offset * perp)
        lms.append(t - offset * perp)
        prev = t
    return np.asarray(lms)


def make_world(preset: str, overrides: Optional[dict] = None, seed: int = 0):
    """Build ``(model, ground_truth, root_belief)`` for a named preset."""
    if preset == "two_landmark":
        cfg = dict(_TWO_LANDMARK_DEFAULTS)
    elif preset == "waypoint_course":
        cfg = dict(_WAYPOINT_DEFAULTS)
    else:
        raise ConfigError(f"unknown preset {preset!r} (expected one of {PRESETS})")
    for key, value in (overrides or {}).items():
        if key not in cfg:
            raise ConfigError(f"unknown override {key!r} for preset {preset!r}")
        cfg[key] = value

    targets = np.asarray(cfg["targets"], dtype=float)
    if cfg.get("landmarks") is None:
        landmarks = _waypoint_landmarks(targets, cfg["landmark_offset"])
    else:
        landmarks = np.asarray(cfg["landmarks"], dtype=float)
    if cfg["n_landmarks"] is not None:
        landmarks = landmarks[: int(cfg["n_landmarks"])]

    L = landmarks.shape[0]
    lm_var = 0.0 if cfg["freeze_landmarks"] else float(cfg["landmark_prior"])
    model = WorldModel(
        landmark_means=landmarks,
        landmark_prior_cov=np.stack([lm_var * np.eye(2)] * L),
        step_size=float(cfg["step_size"]),
        process_noise_cov=float(cfg["process_noise"]) * np.eye(2),
        obs_noise_cov=float(cfg["obs_noise"]) * np.eye(2),
        targets=targets,
        d_max=float(cfg["d_max"]),
        assoc_gate_radius=cfg["gate_radius"],
        waypoint_radius=float(cfg["waypoint_radius"]),
    )

    rng = np.random.default_rng(seed)
    if lm_var > 0:
        true_landmarks = landmarks + rng.multivariate_normal(
            np.zeros(2), lm_var * np.eye(2), size=L
        )
    else:
        true_landmarks = landmarks.copy()
    agent_start = np.asarray(cfg["agent_start"], dtype=float)
    gt = GroundTruth(agent_start.copy(), true_landmarks, rng)

    root = _root_belief(model, cfg, agent_start)
    return model, gt, root


def _root_belief(model: WorldModel, cfg: dict, agent_start: np.ndarray) -> MixtureBelief:
    dim = model.state_dim
    cov = np.zeros((dim, dim))
    cov[:2, :2] = float(cfg["agent_prior"]) * np.eye(2)
    for j in range(model.n_landmarks):
        cov[2 + 2 * j : 4 + 2 * j, 2 + 2 * j : 4 + 2 * j] = model.landmark_prior_cov[j]
    base_mean = np.concatenate([agent_start, model.landmark_means.ravel()])
    if cfg["single_hypothesis_root"]:
        comps = [((0,), 1.0, ConditionalBelief(base_mean, cov))]
    else:
        offset = np.asarray(cfg["root_hypothesis_offset"], dtype=float)
        mean_hi = base_mean.copy()
        mean_hi[:2] += offset
        comps = [
            ((0,), 0.5, ConditionalBelief(base_mean, cov)),
            ((1,), 0.5, ConditionalBelief(mean_hi, cov.copy())),
        ]
    return MixtureBelief.from_components(comps, history_len=0)
