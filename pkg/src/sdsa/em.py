"""Stochastic-descent EM for Bernoulli mixtures with a hidden component label.

Parameters are unconstrained logits: ``theta = [mix_logits (K), comp_logits (K*d)]``
with mixing weights ``softmax(mix_logits)`` and per-component Bernoulli means
``sigmoid(comp_logits)``.  Labels are ``0..K-1``.

The marginal NLL gradient for a datum ``v`` satisfies

    -grad log p(v | theta) = -sum_h p(h | v, theta) grad log p(v, h | theta),

so averaging complete-data scores over labels imputed from the posterior at
the current theta gives an unbiased *descent* direction.  The update adds
``(gamma/m) * sum_j grad log p(v, h_j | theta)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, log_softmax, logsumexp, softmax

from . import core
from .gibbs import binary_states
from .schedules import StepSizeSchedule


@dataclass(frozen=True)
class MixtureModel:
    K: int
    d: int

    def __post_init__(self):
        if self.K < 1 or self.d < 1:
            raise ValueError(f"need K >= 1 and d >= 1, got K={self.K}, d={self.d}")

    @property
    def q(self) -> int:
        return self.K * (1 + self.d)

    def visible_space(self) -> np.ndarray:
        return binary_states(self.d)

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.q,):
            raise ValueError(f"theta has shape {theta.shape}, expected ({self.q},)")
        return theta[: self.K], theta[self.K:].reshape(self.K, self.d)

    def pack(self, mix_logits, comp_logits) -> np.ndarray:
        return np.concatenate([np.ravel(mix_logits), np.ravel(comp_logits)]).astype(float)

    def from_probabilities(self, mixing, means) -> np.ndarray:
        means = np.asarray(means, dtype=float)
        return self.pack(np.log(mixing), np.log(means) - np.log1p(-means))

    def mixing(self, theta) -> np.ndarray:
        return softmax(self.unpack(theta)[0])

    def means(self, theta) -> np.ndarray:
        return expit(self.unpack(theta)[1])

    def init_theta(self, rng: np.random.Generator) -> np.ndarray:
        """Zero mixing logits, component logits ``0.1 * N(0, 1)``."""
        return self.pack(np.zeros(self.K), 0.1 * rng.standard_normal((self.K, self.d)))

    def _check_visible(self, V):
        V = np.atleast_2d(np.asarray(V, dtype=float))
        if V.shape[1] != self.d or not np.all((V == 0) | (V == 1)):
            raise ValueError(f"visible vectors must be binary of length {self.d}")
        return V

    def joint_log_table(self, V, theta) -> np.ndarray:
        """``log p(v, h | theta)`` for every row ``v`` of ``V`` and every label; shape ``(n, K)``."""
        V = self._check_visible(V)
        mix, comp = self.unpack(theta)
        return log_softmax(mix) + V @ log_expit(comp).T + (1 - V) @ log_expit(-comp).T

    def joint_log_density(self, v, h: int, theta) -> float:
        if not 0 <= h < self.K:
            raise ValueError(f"label {h} outside 0..{self.K - 1}")
        return float(self.joint_log_table(v, theta)[0, h])

    def marginal_log_density(self, V, theta) -> np.ndarray:
        return logsumexp(self.joint_log_table(V, theta), axis=1)

    def posterior(self, V, theta) -> np.ndarray:
        """``p(h | v, theta)``, one row per visible vector."""
        return softmax(self.joint_log_table(V, theta), axis=1)

    def complete_scores(self, v, theta) -> np.ndarray:
        """``grad log p(v, h | theta)`` for every label ``h``; shape ``(K, q)``."""
        v = self._check_visible(v)[0]
        pi = self.mixing(theta)
        mu = self.means(theta)
        scores = np.zeros((self.K, self.q))
        scores[:, : self.K] = np.eye(self.K) - pi
        for h in range(self.K):
            block = np.zeros((self.K, self.d))
            block[h] = v - mu[h]
            scores[h, self.K:] = block.ravel()
        return scores


def joint_log_density(model: MixtureModel, v, h: int, theta) -> float:
    return model.joint_log_density(v, h, theta)


def marginal_nll(model: MixtureModel, data, theta) -> float:
    data = np.atleast_2d(data)
    if len(data) == 0:
        raise ValueError("data set is empty")
    return float(-model.marginal_log_density(data, theta).mean())


def marginal_nll_grad(model: MixtureModel, data, theta) -> np.ndarray:
    """Exact gradient, summing over labels with posterior weights."""
    data = np.atleast_2d(data)
    post = model.posterior(data, theta)
    g = np.zeros(model.q)
    for v, r in zip(data, post):
        g -= r @ model.complete_scores(v, theta)
    return g / len(data)


@dataclass(frozen=True)
class Imputation:
    h_samples: np.ndarray


def posterior_sample(model: MixtureModel, v, theta, m: int, rng: np.random.Generator) -> Imputation:
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    cdf = np.cumsum(model.posterior(v, theta)[0])
    cdf[-1] = 1.0
    return Imputation(np.searchsorted(cdf, rng.random(m), side="right"))


def direction_from_labels(model: MixtureModel, v, labels, theta) -> np.ndarray:
    return model.complete_scores(v, theta)[np.asarray(labels, dtype=int)].mean(axis=0)


def em_direction(model: MixtureModel, v, theta, m: int, rng: np.random.Generator) -> np.ndarray:
    """``(1/m) sum_j grad log p(v, h_j | theta)`` with ``h_j ~ p(h | v, theta)``."""
    imp = posterior_sample(model, v, theta, m, rng)
    return direction_from_labels(model, v, imp.h_samples, theta)


def expected_em_direction(model: MixtureModel, data, theta) -> np.ndarray:
    """Expected direction by enumerating data points and labels."""
    data = np.atleast_2d(data)
    post = model.posterior(data, theta)
    dbar = np.zeros(model.q)
    for v, r in zip(data, post):
        for h in range(model.K):
            dbar += r[h] * direction_from_labels(model, v, [h], theta)
    return dbar / len(data)


class SemSampler(core.Sampler):
    """Draws ``[v, h_1, ..., h_m]``: a data point and ``m`` labels imputed at the current theta."""

    def __init__(self, model: MixtureModel, data, m: int):
        if m < 1:
            raise ValueError(f"m must be >= 1, got {m}")
        self.model = model
        self.data = np.atleast_2d(np.asarray(data, dtype=float))
        self.m = m
        self.bound = float(np.sqrt(model.d + m * (model.K - 1) ** 2))

    def draw(self, theta, rng):
        v = self.data[rng.integers(len(self.data))]
        labels = posterior_sample(self.model, v, theta, self.m, rng).h_samples
        return np.concatenate([v, labels.astype(float)])


def sem_search_direction(model: MixtureModel) -> core.SearchDirection:
    d = model.d
    return core.SearchDirection(lambda x, theta: direction_from_labels(model, x[:d], x[d:].astype(int), theta))


def sem_oracle(model: MixtureModel, data) -> core.Oracle:
    return core.Oracle(
        loss=lambda th: marginal_nll(model, data, th),
        grad=lambda th: marginal_nll_grad(model, data, th),
        expected_direction=lambda th: expected_em_direction(model, data, th),
    )


def classical_em(model: MixtureModel, data, theta0, tol: float = 1e-12, max_iters: int = 100_000) -> np.ndarray:
    """Deterministic EM with closed-form M-steps; returns the fixed point as logits."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    theta = np.asarray(theta0, dtype=float)
    prev = marginal_nll(model, data, theta)
    for _ in range(max_iters):
        r = model.posterior(data, theta)
        weight = r.sum(axis=0)
        mixing = weight / len(data)
        means = (r.T @ data) / weight[:, None]
        means = np.clip(means, 1e-12, 1 - 1e-12)
        theta = model.from_probabilities(mixing, means)
        cur = marginal_nll(model, data, theta)
        if prev - cur < tol:
            return theta
        prev = cur
    raise RuntimeError(f"EM did not settle within {max_iters} iterations")


def generate_data(model: MixtureModel, mixing, means, n: int, rng: np.random.Generator) -> np.ndarray:
    labels = rng.choice(model.K, size=n, p=np.asarray(mixing, dtype=float))
    return (rng.random((n, model.d)) < np.asarray(means)[labels]).astype(float)


def train_sem(
    model: MixtureModel,
    data,
    initial,
    schedule: StepSizeSchedule,
    m: int,
    max_iters: int,
    seed: int = 0,
    **run_kwargs,
) -> core.Trajectory:
    """Stochastic-descent EM: per iteration one datum, ``m`` imputed labels at the current theta."""
    return core.run(
        initial,
        schedule,
        sem_search_direction(model),
        SemSampler(model, data, m),
        max_iters=max_iters,
        oracle=run_kwargs.pop("oracle", sem_oracle(model, data)),
        seed=seed,
        **run_kwargs,
    )
