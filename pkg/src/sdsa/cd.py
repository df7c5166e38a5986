"""Contrastive-divergence learning of finite Gibbs models.

The negative log-likelihood gradient of a Gibbs model is

    (1/n) sum_i dV(x_i)/dtheta - E_{p(.|theta)}[dV/dtheta].

The model expectation is replaced by an average over ``m`` samples drawn at
the current parameters, so the noise in the search direction depends on
``theta``.  Small sample spaces keep the exact gradient available as an oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import core
from .gibbs import FiniteGibbsModel, GibbsChainState
from .schedules import StepSizeSchedule

SAMPLER_MODES = ("exact", "cd_k", "persistent")


@dataclass(frozen=True)
class CdConfig:
    """Model-sample batch settings.

    ``exact`` draws ``m`` i.i.d. samples from ``p(. | theta)``.  ``cd_k`` starts a
    Gibbs chain at the observation, takes ``k`` sweeps for the first sample and
    one more sweep for each further one.  ``persistent`` keeps a single chain
    across iterations (``burn_in`` sweeps when it starts, then the ``cd_k``
    batch rule); experimental.
    """

    m: int = 1
    sampler_mode: str = "exact"
    k: int = 1
    burn_in: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.sampler_mode not in SAMPLER_MODES:
            raise ValueError(f"sampler_mode must be one of {SAMPLER_MODES}, got {self.sampler_mode!r}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.burn_in < 0:
            raise ValueError(f"burn_in must be >= 0, got {self.burn_in}")


class DataSet:
    """Observations from the model's sample space, kept as an empirical distribution."""

    def __init__(self, model: FiniteGibbsModel, observations):
        obs = np.atleast_2d(np.asarray(observations, dtype=float))
        if len(obs) == 0:
            raise ValueError("data set is empty")
        self.observations = obs
        self.indices = np.array([model.index_of(x) for x in obs])
        self.empirical = np.bincount(self.indices, minlength=model.size) / len(obs)

    @classmethod
    def weighted(cls, model: FiniteGibbsModel, weights) -> DataSet:
        """A data set whose empirical distribution is ``weights`` over the sample space."""
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (model.size,) or np.any(weights < 0):
            raise ValueError("weights must be a non-negative vector over the sample space")
        ds = cls.__new__(cls)
        ds.observations = model.states[weights > 0]
        ds.indices = np.flatnonzero(weights > 0)
        ds.empirical = weights / weights.sum()
        return ds

    def __len__(self):
        return len(self.observations)


def generate_dataset(model: FiniteGibbsModel, theta, n: int, rng: np.random.Generator) -> DataSet:
    idx = model.sample_indices(theta, rng, size=n)
    return DataSet(model, model.states[idx])


def exact_nll(model: FiniteGibbsModel, data: DataSet, theta) -> float:
    return float(-data.empirical @ model.log_probs(theta))


def exact_nll_grad(model: FiniteGibbsModel, data: DataSet, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    dV = model.energy_grad(model.states, theta)
    return (data.empirical - model.probs(theta)) @ dV


def direction_from_batch(model: FiniteGibbsModel, x_obs, ys, theta) -> np.ndarray:
    """``-dV(x_obs)/dtheta + mean_j dV(y_j)/dtheta``."""
    theta = np.asarray(theta, dtype=float)
    x_obs = np.atleast_2d(x_obs)
    ys = np.atleast_2d(ys)
    return -model.energy_grad(x_obs, theta)[0] + model.energy_grad(ys, theta).mean(axis=0)


def _chain_batch(model, start: int, theta, config: CdConfig, rng, energies) -> tuple[list[int], int]:
    chain = GibbsChainState(start)
    picks = []
    for j in range(config.m):
        for _ in range(config.k if j == 0 else 1):
            chain = model.gibbs_sweep(chain, theta, rng, energies)
        picks.append(chain.current)
    return picks, chain.current


def model_batch(model, theta, config: CdConfig, rng, start: int | None = None) -> tuple[np.ndarray, int | None]:
    """Draw the ``m`` model samples; returns the batch and the chain's end state (chain modes)."""
    if config.sampler_mode == "exact":
        return model.states[model.sample_indices(theta, rng, size=config.m)], None
    if start is None:
        raise ValueError(f"{config.sampler_mode} mode needs a chain start state")
    energies = model.energies(theta)
    picks, end = _chain_batch(model, start, theta, config, rng, energies)
    return model.states[picks], end


def cd_direction(model: FiniteGibbsModel, x_obs, theta, config: CdConfig, rng) -> np.ndarray:
    """One contrastive-divergence search direction for observation ``x_obs``.

    Chain modes start from ``x_obs`` (a fresh chain, so ``persistent`` behaves
    like ``cd_k`` here; use :class:`CdSampler` for a chain that persists).
    """
    start = model.index_of(x_obs)
    ys, _ = model_batch(model, theta, config, rng, start)
    return direction_from_batch(model, x_obs, ys, theta)


class CdSampler(core.Sampler):
    """Draws ``[x_obs, y_1, ..., y_m]``: a data point plus a model batch at the current theta."""

    def __init__(self, model: FiniteGibbsModel, data: DataSet, config: CdConfig):
        self.model = model
        self.data = data
        self.config = config
        self.bound = float(np.sqrt(config.m + 1) * np.max(np.linalg.norm(model.states, axis=1)))
        self._chain = None

    def reset(self):
        self._chain = None

    def draw(self, theta, rng):
        i = int(rng.integers(len(self.data)))
        x_obs = self.data.observations[i]
        cfg = self.config
        if cfg.sampler_mode == "exact":
            ys, _ = model_batch(self.model, theta, cfg, rng)
        elif cfg.sampler_mode == "cd_k":
            ys, _ = model_batch(self.model, theta, cfg, rng, self.model.index_of(x_obs))
        else:
            energies = self.model.energies(theta)
            if self._chain is None:
                chain = GibbsChainState(self.model.index_of(x_obs))
                for _ in range(cfg.burn_in):
                    chain = self.model.gibbs_sweep(chain, theta, rng, energies)
                self._chain = chain.current
            picks, self._chain = _chain_batch(self.model, self._chain, theta, cfg, rng, energies)
            ys = self.model.states[picks]
        return np.vstack([x_obs, ys])


def cd_search_direction(model: FiniteGibbsModel) -> core.SearchDirection:
    return core.SearchDirection(lambda x, theta: direction_from_batch(model, x[0], x[1:], theta))


def expected_cd_direction(model: FiniteGibbsModel, data: DataSet, theta, config: CdConfig | None = None) -> np.ndarray:
    """Expected CD direction by enumerating observations and model samples.

    Exact mode sums the direction over every pair ``(x_obs, y)``.  ``cd_k``
    propagates each observation through the exact sweep transition matrix, so
    the ``j``-th batch member has distribution ``P**(k+j-1)[x_obs]``.  The
    persistent chain is treated as stationary, i.e. like exact mode.
    """
    config = config or CdConfig()
    theta = np.asarray(theta, dtype=float)
    S = model.states
    obs = np.flatnonzero(data.empirical > 0)
    dbar = np.zeros(model.q)
    if config.sampler_mode in ("exact", "persistent"):
        p = model.probs(theta)
        for a in obs:
            for b in range(model.size):
                dbar += data.empirical[a] * p[b] * direction_from_batch(model, S[a], S[b], theta)
        return dbar
    P = model.sweep_transition_matrix(theta)
    dV = model.energy_grad(S, theta)
    step = np.linalg.matrix_power(P, config.k)
    y_mean = np.zeros((model.size, model.q))
    for _ in range(config.m):
        y_mean += step @ dV
        step = step @ P
    y_mean /= config.m
    for a in obs:
        dbar += data.empirical[a] * (-dV[a] + y_mean[a])
    return dbar


def cd_oracle(model: FiniteGibbsModel, data: DataSet, config: CdConfig | None = None) -> core.Oracle:
    return core.Oracle(
        loss=lambda th: exact_nll(model, data, th),
        grad=lambda th: exact_nll_grad(model, data, th),
        expected_direction=lambda th: expected_cd_direction(model, data, th, config),
    )


def fit_full_batch(model: FiniteGibbsModel, data: DataSet, theta0, step: float = 1.0, tol: float = 1e-9) -> np.ndarray:
    """Minimise the exact NLL by deterministic gradient descent (the oracle optimum)."""
    return core.deterministic_descent(lambda th: exact_nll_grad(model, data, th), theta0, step, tol)


def train_cd(
    model: FiniteGibbsModel,
    data: DataSet,
    initial,
    schedule: StepSizeSchedule,
    config: CdConfig,
    max_iters: int,
    seed: int = 0,
    **run_kwargs,
) -> core.Trajectory:
    """Contrastive-divergence SA: one observation per iteration, drawn uniformly from the data."""
    return core.run(
        initial,
        schedule,
        cd_search_direction(model),
        CdSampler(model, data, config),
        max_iters=max_iters,
        oracle=run_kwargs.pop("oracle", cd_oracle(model, data, config)),
        seed=seed,
        **run_kwargs,
    )
