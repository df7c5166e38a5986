"""Built-in testbeds, looked up by registry key.

Each builder takes the ``[model]`` parameters of an experiment config and
returns a :class:`Problem`: the sampler, search direction, exact oracle and
default run settings for one algorithm on one enumerable model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from . import active, cd, core, em
from .gibbs import FiniteGibbsModel
from .risk import PASSIVE, RiskOracle
from .schedules import StepSizeSchedule

ALGORITHMS = ("sgd_passive", "cd", "sem", "active")


class UnknownKeyError(KeyError):
    pass


@dataclass
class Problem:
    key: str
    algorithm: str
    initial: np.ndarray
    direction: core.SearchDirection
    sampler: core.Sampler
    oracle: core.Oracle
    theta_grid: list
    schedule: StepSizeSchedule
    m: int = 1
    reference_loss: Callable[[], float] | None = None
    extras: dict = field(default_factory=dict)

    @property
    def q(self) -> int:
        return self.initial.size


def _grid(q: int, seed: int, n: int = 5, scale: float = 1.0) -> list:
    rng = np.random.default_rng(seed)
    return [scale * rng.standard_normal(q) for _ in range(n)]


def _take(params: dict, defaults: dict) -> dict:
    unknown = set(params) - set(defaults)
    if unknown:
        raise ValueError(f"unknown model parameters: {sorted(unknown)}")
    return {**defaults, **params}


def _from_risk_oracle(risk: RiskOracle, direction, sampler) -> core.Oracle:
    return core.Oracle(
        loss=risk.risk,
        grad=risk.risk_grad,
        expected_direction=lambda th: core.enumerated_direction(direction, sampler, th),
    )


def quadratic(params: dict) -> Problem:
    """``c(x, theta) = x |theta|^2`` with ``x`` uniform on ``{0.5, 1.5}``; risk ``|theta|^2``.

    The direction ``-2 x theta`` is noisy but its noise vanishes at the minimiser.
    """
    p = _take(params, {"q": 2, "initial": 1.0})
    q = int(p["q"])
    xs = np.array([0.5, 1.5])
    probs = np.array([0.5, 0.5])
    risk = RiskOracle(
        PASSIVE,
        cost=lambda th: xs * (th @ th),
        cost_grad=lambda th: 2 * xs[:, None] * th[None, :],
        probs=probs,
    )
    direction = core.SearchDirection(lambda x, th: -2.0 * x[0] * th)
    sampler = core.FiniteSampler(xs, probs)
    return Problem(
        "quadratic", "sgd_passive", np.full(q, float(p["initial"])), direction, sampler,
        _from_risk_oracle(risk, direction, sampler), _grid(q, 1), StepSizeSchedule.darken(0.25, 100),
        reference_loss=lambda: 0.0, extras={"risk_oracle": risk},
    )


def contraction(params: dict) -> Problem:
    """Deterministic ``d = -2 theta`` on ``|theta|^2``; constant ``gamma = 0.25`` halves theta each step."""
    p = _take(params, {"q": 1, "initial": 1.0})
    q = int(p["q"])
    risk = RiskOracle(
        PASSIVE,
        cost=lambda th: np.array([th @ th]),
        cost_grad=lambda th: 2 * th[None, :],
        probs=np.ones(1),
    )
    direction = core.SearchDirection(lambda x, th: -2.0 * th)
    sampler = core.ConstantSampler([0.0])
    return Problem(
        "contraction", "sgd_passive", np.full(q, float(p["initial"])), direction, sampler,
        _from_risk_oracle(risk, direction, sampler), _grid(q, 2), StepSizeSchedule.constant(0.25),
        reference_loss=lambda: 0.0, extras={"risk_oracle": risk},
    )


LOGISTIC_Z = np.array([-1.0, 0.0, 1.0, 2.0])
LOGISTIC_P_Y1 = np.array([0.2, 0.4, 0.6, 0.9])


def logistic(params: dict) -> Problem:
    """Logistic regression on a finite sample space of ``(z, y)`` pairs, features ``(1, z)``.

    ``z`` is uniform on four values and the labels are noisy, so the
    minimiser is finite.  The Hessian is bounded by ``E[f f^T] / 4``.
    """
    _take(params, {})
    points = np.array([(z, y) for z in LOGISTIC_Z for y in (0.0, 1.0)])
    probs = np.array([0.25 * (py if y else 1 - py) for py in LOGISTIC_P_Y1 for y in (0.0, 1.0)])
    feats = np.column_stack([np.ones(len(points)), points[:, 0]])
    labels = points[:, 1]

    def cost(th):
        s = feats @ th
        return np.logaddexp(0.0, s) - labels * s

    def cost_grad(th):
        return (expit(feats @ th) - labels)[:, None] * feats

    risk = RiskOracle(PASSIVE, cost=cost, cost_grad=cost_grad, probs=probs)

    def d(x, th):
        f = np.array([1.0, x[0]])
        return -(expit(f @ th) - x[1]) * f

    direction = core.SearchDirection(d, bound=float(np.max(np.linalg.norm(feats, axis=1))))
    sampler = core.FiniteSampler(points, probs)
    return Problem(
        "logistic", "sgd_passive", np.zeros(2), direction, sampler,
        _from_risk_oracle(risk, direction, sampler), _grid(2, 3), StepSizeSchedule.darken(1.0, 200),
        extras={"risk_oracle": risk},
    )


def boltzmann4(params: dict) -> Problem:
    """4-unit Boltzmann machine fit by contrastive divergence to 500 samples from a seeded ``theta*``."""
    p = _take(params, {"n": 500, "data_seed": 2024, "sampler_mode": "exact", "batch": 1, "k": 1, "burn_in": 0})
    model = FiniteGibbsModel.boltzmann(4)
    rng = np.random.default_rng(int(p["data_seed"]))
    theta_star = rng.uniform(-1.0, 1.0, model.q)
    data = cd.generate_dataset(model, theta_star, int(p["n"]), rng)
    config = cd.CdConfig(m=int(p["batch"]), sampler_mode=p["sampler_mode"], k=int(p["k"]), burn_in=int(p["burn_in"]))
    initial = np.zeros(model.q)

    def reference():
        return cd.exact_nll(model, data, cd.fit_full_batch(model, data, initial))

    return Problem(
        "boltzmann4", "cd", initial, cd.cd_search_direction(model), cd.CdSampler(model, data, config),
        cd.cd_oracle(model, data, config), _grid(model.q, 4), StepSizeSchedule.darken(0.5, 100),
        reference_loss=reference,
        extras={"model": model, "data": data, "config": config, "theta_star": theta_star},
    )


MIXTURE_MEANS = np.array([
    [0.9, 0.85, 0.8, 0.15, 0.1, 0.2],
    [0.1, 0.2, 0.15, 0.85, 0.9, 0.8],
])


def mixture2x6(params: dict) -> Problem:
    """Two-component Bernoulli mixture over ``{0,1}^6`` learned by stochastic-descent EM."""
    p = _take(params, {"n": 500, "data_seed": 11, "init_seed": 5, "imputations": 5})
    model = em.MixtureModel(2, 6)
    data = em.generate_data(model, [0.4, 0.6], MIXTURE_MEANS, int(p["n"]), np.random.default_rng(int(p["data_seed"])))
    initial = model.init_theta(np.random.default_rng(int(p["init_seed"])))

    def reference():
        return em.marginal_nll(model, data, em.classical_em(model, data, initial))

    return Problem(
        "mixture2x6", "sem", initial, em.sem_search_direction(model), em.SemSampler(model, data, int(p["imputations"])),
        em.sem_oracle(model, data), _grid(model.q, 5), StepSizeSchedule.darken(0.5, 100),
        reference_loss=reference, extras={"model": model, "data": data},
    )


ENV3X2_INITIAL = np.array([0.5, 0.3, 0.2])
ENV3X2_TRANSITION = np.array([
    [[0.8, 0.15, 0.05], [0.2, 0.3, 0.5]],
    [[0.6, 0.3, 0.1], [0.1, 0.4, 0.5]],
    [[0.5, 0.3, 0.2], [0.3, 0.3, 0.4]],
])
# final-state cost plus a small charge for the second action; action 0 is cheaper everywhere
ENV3X2_COST = np.array([0.0, 0.5, 1.0])[None, None, :] + np.array([0.0, 0.05])[None, :, None] + np.zeros((3, 2, 3))


def env3x2(params: dict) -> Problem:
    """3-state, 2-action episodic environment in which the first action dominates."""
    p = _take(params, {"horizon": 1, "critic_weight": 0.0, "baseline": 0.0})
    horizon = int(p["horizon"])
    env = active.ActiveEnvironment(ENV3X2_INITIAL, ENV3X2_TRANSITION)
    cost = active.ActiveCost(ENV3X2_COST, float(p["critic_weight"]))
    baseline = float(p["baseline"])

    def reference():
        return min(active.deterministic_policy_risks(env, cost, horizon).values())

    return Problem(
        "env3x2", "active", np.zeros(env.q), active.policy_search_direction(env, cost, baseline),
        active.EpisodeSampler(env, horizon), active.active_oracle(env, cost, horizon, baseline),
        _grid(env.q, 6), StepSizeSchedule.darken(1.0, 1000),
        reference_loss=reference if cost.critic_weight == 0 else None,
        extras={"env": env, "cost": cost, "horizon": horizon},
    )


REGISTRY: dict[str, tuple[str, Callable[[dict], Problem]]] = {
    "quadratic": ("sgd_passive", quadratic),
    "contraction": ("sgd_passive", contraction),
    "logistic": ("sgd_passive", logistic),
    "boltzmann4": ("cd", boltzmann4),
    "mixture2x6": ("sem", mixture2x6),
    "env3x2": ("active", env3x2),
}


def build(key: str, params: dict | None = None) -> Problem:
    if key not in REGISTRY:
        raise UnknownKeyError(key)
    return REGISTRY[key][1](dict(params or {}))
