"""Association-conditioned Gaussian filtering and mixture-belief maintenance.

A hypothesis is a sequence of data-association choices; the belief over the
continuous state is a weighted mixture of Gaussians, one component per
hypothesis.  All weight arithmetic is done in log space so that beliefs with
hundreds of low-likelihood components do not underflow.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy.special import logsumexp

if TYPE_CHECKING:
    from .env import WorldModel

Label = tuple[int, ...]

LOG_2PI = float(np.log(2.0 * np.pi))


class BeliefContractError(ValueError):
    """An input violated a belief-operation contract (e.g. dimension mismatch)."""


class DegenerateCovarianceError(RuntimeError):
    """A covariance required for an update was (numerically) singular."""


class LikelihoodCollapseError(RuntimeError):
    """Every hypothesis assigned zero likelihood to the observation."""


@dataclass(frozen=True)
class Action:
    """A primitive motion command: a named 2D displacement."""

    id: str
    displacement: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "displacement", np.asarray(self.displacement, dtype=float))


@dataclass
class ConditionalBelief:
    """Gaussian belief over the continuous state, conditioned on one hypothesis."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise BeliefContractError(
                f"covariance shape {self.cov.shape} does not match mean dim {self.mean.size}"
            )

    @property
    def dim(self) -> int:
        return self.mean.size

    def validate(self, atol: float = 1e-9):
        scale = max(1.0, float(np.abs(self.cov).max()))
        if not np.allclose(self.cov, self.cov.T, atol=atol * scale):
            raise BeliefContractError("covariance is not symmetric")
        eigs = np.linalg.eigvalsh(0.5 * (self.cov + self.cov.T))
        if eigs.min() < -1e-9 * scale:
            raise BeliefContractError(f"covariance has negative eigenvalue {eigs.min():g}")


@dataclass
class MixtureBelief:
    """Weighted set of association-conditioned Gaussian beliefs.

    Components are stored columnar (stacked means/covariances) so that
    prediction and measurement updates vectorize across hypotheses.
    ``history_len`` counts the observation updates applied since the root.
    """

    labels: list[Label]
    log_weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    history_len: int = 0

    def __post_init__(self):
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covs = np.asarray(self.covs, dtype=float)
        if self.covs.ndim == 2:
            self.covs = self.covs[None, :, :]

    @classmethod
    def from_components(
        cls,
        components: Sequence[tuple[Label, float, ConditionalBelief]],
        history_len: int = 0,
    ) -> "MixtureBelief":
        labels = [tuple(lab) for lab, _, _ in components]
        weights = np.array([w for _, w, _ in components], dtype=float)
        means = np.stack([cb.mean for _, _, cb in components])
        covs = np.stack([cb.cov for _, _, cb in components])
        with np.errstate(divide="ignore"):
            logw = np.log(weights)
        b = cls(labels, logw, means, covs, history_len)
        b.normalize()
        return b

    @property
    def n_components(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def component(self, i: int) -> tuple[Label, float, ConditionalBelief]:
        return self.labels[i], float(np.exp(self.log_weights[i])), ConditionalBelief(
            self.means[i].copy(), self.covs[i].copy()
        )

    def max_weight_index(self) -> int:
        # deterministic tie-break on lexicographic label order
        best = 0
        for i in range(1, self.n_components):
            if self.log_weights[i] > self.log_weights[best] or (
                self.log_weights[i] == self.log_weights[best]
                and self.labels[i] < self.labels[best]
            ):
                best = i
        return best

    def normalize(self):
        total = logsumexp(self.log_weights)
        if not np.isfinite(total):
            raise LikelihoodCollapseError("all mixture weights are zero")
        self.log_weights = self.log_weights - total

    def validate(self):
        if len(set(self.labels)) != len(self.labels):
            raise BeliefContractError("hypothesis labels are not pairwise distinct")
        lengths = {len(lab) for lab in self.labels}
        if len(lengths) > 1:
            raise BeliefContractError(f"label lengths differ: {sorted(lengths)}")
        if abs(float(np.exp(logsumexp(self.log_weights))) - 1.0) > 1e-12:
            raise BeliefContractError("mixture weights do not sum to 1")

    def copy(self) -> "MixtureBelief":
        return MixtureBelief(
            list(self.labels),
            self.log_weights.copy(),
            self.means.copy(),
            self.covs.copy(),
            self.history_len,
        )

    def to_json_dict(self) -> dict:
        """Snapshot as plain JSON types: labels as int arrays, moments row-major."""
        return {
            "history_len": self.history_len,
            "components": [
                {
                    "label": list(self.labels[i]),
                    "weight": float(np.exp(self.log_weights[i])),
                    "mean": self.means[i].tolist(),
                    "cov": self.covs[i].tolist(),
                }
                for i in range(self.n_components)
            ],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "MixtureBelief":
        comps = [
            (tuple(c["label"]), c["weight"], ConditionalBelief(np.array(c["mean"]), np.array(c["cov"])))
            for c in d["components"]
        ]
        return cls.from_components(comps, history_len=d["history_len"])


# ---------------------------------------------------------------------------
# Gaussian machinery

def kalman_update(mean, cov, z, H, R):
    """Conjugate Gaussian measurement update ``z = H x + v``, ``v ~ N(0, R)``.

    Returns ``(posterior_mean, posterior_cov, log_likelihood)`` where the
    likelihood is the marginal predictive density of ``z`` under the prior.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if H.shape != (z.size, mean.size):
        raise BeliefContractError(f"H shape {H.shape} incompatible with state/obs dims")
    S = H @ cov @ H.T + R
    sign, logdet = np.linalg.slogdet(S)
    if sign <= 0 or not np.isfinite(logdet):
        raise DegenerateCovarianceError("singular innovation covariance")
    innov = z - H @ mean
    sol = np.linalg.solve(S, innov)
    loglik = -0.5 * (z.size * LOG_2PI + logdet + innov @ sol)
    K = cov @ H.T @ np.linalg.inv(S)
    post_mean = mean + K @ innov
    post_cov = cov - K @ S @ K.T
    post_cov = 0.5 * (post_cov + post_cov.T)
    return post_mean, post_cov, float(loglik)


def _batched_logpdf_2d(z, zmeans, Scovs, context=""):
    """log N(z; zmeans[i], Scovs[i]) for stacked 2x2 covariances."""
    a = Scovs[:, 0, 0]
    b = Scovs[:, 0, 1]
    c = Scovs[:, 1, 0]
    d = Scovs[:, 1, 1]
    det = a * d - b * c
    if np.any(det <= 0) or not np.all(np.isfinite(det)):
        raise DegenerateCovarianceError(f"singular predictive covariance {context}")
    dx = z[0] - zmeans[:, 0]
    dy = z[1] - zmeans[:, 1]
    quad = (d * dx * dx - (b + c) * dx * dy + a * dy * dy) / det
    return -LOG_2PI - 0.5 * np.log(det) - 0.5 * quad


def predictive_moments(means, covs, model: "WorldModel", assoc: int):
    """Observation-space moments for source ``assoc``: ``(H mu, H P H' + R)``."""
    H = model.obs_matrix(assoc)
    zmeans = means @ H.T
    Scovs = H @ covs @ H.T + model.obs_noise_cov
    return zmeans, Scovs


def log_predictive_density(means, covs, model: "WorldModel", assoc: int, z) -> np.ndarray:
    """Per-component log density of ``z`` under source ``assoc``.

    For worlds with a discrete observation support the Gaussian density is
    renormalized into a pmf over the support points.
    """
    zmeans, Scovs = predictive_moments(means, covs, model, assoc)
    logp = _batched_logpdf_2d(np.asarray(z, dtype=float), zmeans, Scovs, f"for source {assoc}")
    if model.obs_support is not None:
        lognorm = np.stack(
            [_batched_logpdf_2d(zk, zmeans, Scovs) for zk in model.obs_support]
        )  # (K, n)
        logp = logp - logsumexp(lognorm, axis=0)
    return logp


# ---------------------------------------------------------------------------
# Belief operations

def _predict_arrays(means, covs, action: Action, model: "WorldModel"):
    means = means.copy()
    covs = covs.copy()
    means[:, :2] += action.displacement
    covs[:, :2, :2] += model.process_noise_cov
    return means, covs


def predict(belief: ConditionalBelief, action: Action, model: "WorldModel") -> ConditionalBelief:
    """Propagate one Gaussian through the linear motion model (exact)."""
    if belief.dim != model.state_dim:
        raise BeliefContractError(
            f"belief dim {belief.dim} does not match model state dim {model.state_dim}"
        )
    means, covs = _predict_arrays(belief.mean[None, :], belief.cov[None, :, :], action, model)
    return ConditionalBelief(means[0], covs[0])


def conditional_update(
    belief: ConditionalBelief, z, assoc: int, model: "WorldModel"
) -> tuple[ConditionalBelief, float]:
    """Measurement update against source ``assoc``; returns posterior and likelihood."""
    if not 0 <= assoc < model.n_landmarks:
        raise BeliefContractError(f"association id {assoc} out of range")
    try:
        mean, cov, loglik = kalman_update(
            belief.mean, belief.cov, z, model.obs_matrix(assoc), model.obs_noise_cov
        )
    except DegenerateCovarianceError as exc:
        raise DegenerateCovarianceError(f"{exc} (source {assoc})") from exc
    if model.obs_support is not None:
        zmeans, Scovs = predictive_moments(belief.mean[None, :], belief.cov[None, :, :], model, assoc)
        lognorm = logsumexp([_batched_logpdf_2d(zk, zmeans, Scovs)[0] for zk in model.obs_support])
        loglik -= float(lognorm)
    return ConditionalBelief(mean, cov), float(np.exp(loglik))


def _gated_assocs_from_arrays(means, log_weights, model: "WorldModel") -> tuple[int, ...]:
    if model.assoc_gate_radius is None:
        return tuple(range(model.n_landmarks))
    i = int(np.argmax(log_weights))
    agent = means[i, :2]
    out = []
    for j in range(model.n_landmarks):
        lm = means[i, 2 + 2 * j : 4 + 2 * j]
        if np.linalg.norm(lm - agent) <= model.assoc_gate_radius:
            out.append(j)
    return tuple(out)


def admissible_associations(b: MixtureBelief, model: "WorldModel") -> tuple[int, ...]:
    """Sources the association prior admits, gated on the max-weight component."""
    return _gated_assocs_from_arrays(b.means, b.log_weights, model)


def mixture_predict(b: MixtureBelief, action: Action, model: "WorldModel") -> MixtureBelief:
    """Propagate every component without an observation (labels unchanged)."""
    means, covs = _predict_arrays(b.means, b.covs, action, model)
    return MixtureBelief(list(b.labels), b.log_weights.copy(), means, covs, b.history_len)


def mixture_update(b: MixtureBelief, action: Action, z, model: "WorldModel") -> MixtureBelief:
    """Predict, then spawn one child per admissible association per component.

    Child unnormalized weight = parent weight x association prior x marginal
    likelihood of ``z``; the result is renormalized with log-sum-exp.
    """
    means, covs = _predict_arrays(b.means, b.covs, action, model)
    assocs = _gated_assocs_from_arrays(means, b.log_weights, model)
    if not assocs:
        raise BeliefContractError("no admissible association source")
    log_prior = -np.log(len(assocs))

    n = b.n_components
    new_labels: list[Label] = []
    new_logw = np.empty(n * len(assocs))
    new_means = np.empty((n * len(assocs), b.dim))
    new_covs = np.empty((n * len(assocs), b.dim, b.dim))
    z = np.asarray(z, dtype=float)
    for k, j in enumerate(assocs):
        H = model.obs_matrix(j)
        zmeans, Scovs = predictive_moments(means, covs, model, j)
        loglik = log_predictive_density(means, covs, model, j, z)
        # batched Kalman gain; innovation solve across components
        innov = z - zmeans
        Sinv = np.linalg.inv(Scovs)
        K = covs @ H.T @ Sinv
        sl = slice(k * n, (k + 1) * n)
        new_means[sl] = means + np.einsum("nij,nj->ni", K, innov)
        post = covs - K @ Scovs @ np.transpose(K, (0, 2, 1))
        new_covs[sl] = 0.5 * (post + np.transpose(post, (0, 2, 1)))
        new_logw[sl] = b.log_weights + log_prior + loglik
        new_labels.extend(lab + (j,) for lab in b.labels)

    if not np.any(np.isfinite(new_logw)):
        raise LikelihoodCollapseError("total likelihood collapse in mixture update")
    out = MixtureBelief(new_labels, new_logw, new_means, new_covs, b.history_len + 1)
    out.normalize()
    return out


# ---------------------------------------------------------------------------
# Mixture reward

def _label_rng(seed: int, label: Label) -> np.random.Generator:
    """Deterministic per-hypothesis stream keyed on (run seed, label hash)."""
    payload = np.int64(seed).tobytes() + np.asarray(label, dtype=np.int64).tobytes()
    key = int.from_bytes(hashlib.blake2b(payload, digest_size=16).digest(), "little")
    return np.random.Generator(np.random.Philox(key=key))


def component_reward(
    mean, cov, label: Label, model: "WorldModel", n_state_samples: int, rng_seed: int
) -> float:
    """Seeded sample mean of the state reward over one component Gaussian."""
    agent_mean = mean[:2]
    agent_cov = cov[:2, :2]
    rng = _label_rng(rng_seed, label)
    chol = np.linalg.cholesky(agent_cov + 1e-15 * np.eye(2))
    samples = agent_mean + rng.standard_normal((n_state_samples, 2)) @ chol.T
    return float(np.mean(model.reward_of_positions(samples)))


def mixture_reward(
    b: MixtureBelief, action: Action, model: "WorldModel", n_state_samples: int, rng_seed: int
) -> float:
    """Weight-averaged sampled expected reward across hypotheses."""
    if n_state_samples < 1:
        raise BeliefContractError("n_state_samples must be >= 1")
    total = 0.0
    w = b.weights
    for i in range(b.n_components):
        total += w[i] * component_reward(
            b.means[i], b.covs[i], b.labels[i], model, n_state_samples, rng_seed
        )
    return float(total)
