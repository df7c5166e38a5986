"""Episodic active learning with a tabular softmax policy.

An episode starts in ``s_o ~ p_o``, the learner picks ``a ~ softmax(theta[s_o])``
and the environment moves to ``s_F ~ p_o(. | a, s_o)``.  With ``horizon=2``
the learner acts again from the intermediate state, giving the closed-loop
record ``[s_o, a_o, s_1, a_1, s_2]``.  Because the episode distribution moves
with ``theta``, the risk gradient has a score-function term on top of the
usual expected cost gradient.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from . import core
from .risk import ACTIVE, RiskOracle
from .schedules import StepSizeSchedule


@dataclass(frozen=True)
class ActiveEnvironment:
    """``initial[s]`` is ``p_o(s_o)``; ``transition[s, a, s']`` is ``p_o(s_F = s' | a, s_o = s)``."""

    initial: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        init = np.asarray(self.initial, dtype=float)
        trans = np.asarray(self.transition, dtype=float)
        object.__setattr__(self, "initial", init)
        object.__setattr__(self, "transition", trans)
        S = init.size
        if trans.ndim != 3 or trans.shape[0] != S or trans.shape[2] != S:
            raise ValueError(f"transition must have shape (S, J, S) with S={S}, got {trans.shape}")
        for name, table in (("initial", init), ("transition", trans)):
            if np.any(table < 0):
                raise ValueError(f"{name} probabilities must be non-negative")
            if np.max(np.abs(table.sum(axis=-1) - 1)) > 1e-12:
                raise ValueError(f"{name} rows must sum to 1")

    @property
    def n_states(self) -> int:
        return self.initial.size

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def q(self) -> int:
        return self.n_states * self.n_actions


def action_probs(env: ActiveEnvironment, theta, s=None) -> np.ndarray:
    """Softmax policy; the full ``(S, J)`` table, or one row when ``s`` is given."""
    table = softmax(np.asarray(theta, dtype=float).reshape(env.n_states, env.n_actions), axis=1)
    return table if s is None else table[s]


def action_score(env: ActiveEnvironment, theta, s: int, a: int) -> np.ndarray:
    """``grad_theta log p(a | s, theta)``: ``onehot(a) - pi(. | s)`` in block ``s``, zero elsewhere."""
    g = np.zeros((env.n_states, env.n_actions))
    g[s] = -action_probs(env, theta, s)
    g[s, a] += 1.0
    return g.ravel()


@dataclass(frozen=True)
class EpisodeRecord:
    states: tuple[int, ...]
    actions: tuple[int, ...]

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1 or not self.actions:
            raise ValueError("an episode needs one more state than actions and at least one action")

    @property
    def s_o(self) -> int:
        return self.states[0]

    @property
    def s_F(self) -> int:
        return self.states[-1]

    def as_vector(self) -> np.ndarray:
        out = [self.states[0]]
        for a, s in zip(self.actions, self.states[1:]):
            out += [a, s]
        return np.array(out, dtype=float)

    @classmethod
    def from_vector(cls, x) -> EpisodeRecord:
        x = np.asarray(x).astype(int)
        return cls(tuple(int(v) for v in x[0::2]), tuple(int(v) for v in x[1::2]))


@dataclass(frozen=True)
class ActiveCost:
    """Episode cost ``sum_t table[s_t, a_t, s_(t+1)] + critic_weight/2 * |theta|^2``.

    The quadratic critic term is the only theta dependence; with
    ``critic_weight == 0`` the cost gradient vanishes.
    """

    table: np.ndarray
    critic_weight: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "table", np.asarray(self.table, dtype=float))
        if self.table.ndim != 3:
            raise ValueError("cost table must have shape (S, J, S)")

    def value(self, u: EpisodeRecord, theta) -> float:
        c = sum(self.table[s, a, s2] for s, a, s2 in zip(u.states, u.actions, u.states[1:]))
        return float(c) + 0.5 * self.critic_weight * float(np.dot(theta, theta))

    def grad(self, u: EpisodeRecord, theta) -> np.ndarray:
        return self.critic_weight * np.asarray(theta, dtype=float)


def enumerate_episodes(env: ActiveEnvironment, horizon: int = 1) -> list[EpisodeRecord]:
    S, J = range(env.n_states), range(env.n_actions)
    out = []
    for s0 in S:
        for steps in itertools.product(itertools.product(J, S), repeat=horizon):
            out.append(EpisodeRecord((s0,) + tuple(s for _, s in steps), tuple(a for a, _ in steps)))
    return out


def path_log_prob(env: ActiveEnvironment, u: EpisodeRecord, theta) -> float:
    logpi = log_softmax(np.asarray(theta, dtype=float).reshape(env.n_states, env.n_actions), axis=1)
    with np.errstate(divide="ignore"):
        lp = np.log(env.initial[u.s_o])
        for s, a, s2 in zip(u.states, u.actions, u.states[1:]):
            lp += logpi[s, a] + np.log(env.transition[s, a, s2])
    return float(lp)


def path_score(env: ActiveEnvironment, u: EpisodeRecord, theta) -> np.ndarray:
    """``grad log p(u | theta)``; only the policy factors depend on theta."""
    return sum(action_score(env, theta, s, a) for s, a in zip(u.states, u.actions))


def episode_density(env: ActiveEnvironment, theta, s_o: int, s_F: int) -> float:
    """``p(u | theta) = p_o(s_o) sum_j p_o(s_F | a_j, s_o) p(a_j | s_o, theta)`` for ``u = [s_o, s_F]``."""
    pi = action_probs(env, theta, s_o)
    return float(env.initial[s_o] * (env.transition[s_o, :, s_F] @ pi))


@dataclass(frozen=True)
class EpisodeTable:
    episodes: list[EpisodeRecord]
    probs: np.ndarray
    scores: np.ndarray


def episode_table(env: ActiveEnvironment, theta, horizon: int = 1) -> EpisodeTable:
    eps = enumerate_episodes(env, horizon)
    probs = np.exp([path_log_prob(env, u, theta) for u in eps])
    scores = np.array([path_score(env, u, theta) for u in eps])
    return EpisodeTable(eps, probs, scores)


def risk_oracle(env: ActiveEnvironment, cost: ActiveCost, horizon: int = 1) -> RiskOracle:
    """Active-mode oracle over the enumerated episode paths."""
    eps = enumerate_episodes(env, horizon)
    return RiskOracle(
        ACTIVE,
        cost=lambda th: np.array([cost.value(u, th) for u in eps]),
        cost_grad=lambda th: np.array([cost.grad(u, th) for u in eps]),
        probs=lambda th: episode_table(env, th, horizon).probs,
        score=lambda th: episode_table(env, th, horizon).scores,
    )


def active_risk(env: ActiveEnvironment, cost: ActiveCost, theta, horizon: int = 1) -> float:
    return risk_oracle(env, cost, horizon).risk(theta)


def active_risk_grad(env: ActiveEnvironment, cost: ActiveCost, theta, horizon: int = 1) -> np.ndarray:
    """Two-term gradient: expected cost gradient plus cost-weighted score."""
    return risk_oracle(env, cost, horizon).risk_grad(theta)


def passive_formula_grad(env: ActiveEnvironment, cost: ActiveCost, theta, horizon: int = 1) -> np.ndarray:
    """Expected cost gradient alone, i.e. the formula that ignores the moving distribution."""
    return risk_oracle(env, cost, horizon).passive_grad(theta)


def sample_episode(env: ActiveEnvironment, theta, rng: np.random.Generator, horizon: int = 1) -> EpisodeRecord:
    pi = action_probs(env, theta)
    states = [int(rng.choice(env.n_states, p=env.initial))]
    actions = []
    for _ in range(horizon):
        s = states[-1]
        a = int(rng.choice(env.n_actions, p=pi[s]))
        actions.append(a)
        states.append(int(rng.choice(env.n_states, p=env.transition[s, a])))
    return EpisodeRecord(tuple(states), tuple(actions))


def policy_gradient_direction(env: ActiveEnvironment, cost: ActiveCost, u: EpisodeRecord, theta,
                              baseline: float = 0.0) -> np.ndarray:
    """``-grad c(u, theta) - (c(u, theta) - baseline) * grad log p(u | theta)``.

    A constant baseline leaves the expected direction unchanged since the
    score has mean zero.
    """
    return -cost.grad(u, theta) - (cost.value(u, theta) - baseline) * path_score(env, u, theta)


def expected_policy_direction(env: ActiveEnvironment, cost: ActiveCost, theta, horizon: int = 1,
                              baseline: float = 0.0) -> np.ndarray:
    table = episode_table(env, theta, horizon)
    return sum(p * policy_gradient_direction(env, cost, u, theta, baseline)
               for u, p in zip(table.episodes, table.probs))


class EpisodeSampler(core.Sampler):
    def __init__(self, env: ActiveEnvironment, horizon: int = 1):
        self.env = env
        self.horizon = horizon
        self.bound = float(np.sqrt(horizon * (env.n_actions - 1) ** 2 + (horizon + 1) * (env.n_states - 1) ** 2))

    def draw(self, theta, rng):
        return sample_episode(self.env, theta, rng, self.horizon).as_vector()

    def support(self, theta):
        table = episode_table(self.env, theta, self.horizon)
        return np.array([u.as_vector() for u in table.episodes]), table.probs


def policy_search_direction(env: ActiveEnvironment, cost: ActiveCost, baseline: float = 0.0) -> core.SearchDirection:
    return core.SearchDirection(
        lambda x, theta: policy_gradient_direction(env, cost, EpisodeRecord.from_vector(x), theta, baseline)
    )


def active_oracle(env: ActiveEnvironment, cost: ActiveCost, horizon: int = 1, baseline: float = 0.0) -> core.Oracle:
    oracle = risk_oracle(env, cost, horizon)
    return core.Oracle(
        loss=oracle.risk,
        grad=oracle.risk_grad,
        expected_direction=lambda th: expected_policy_direction(env, cost, th, horizon, baseline),
    )


def deterministic_policy_risks(env: ActiveEnvironment, cost: ActiveCost, horizon: int = 1) -> dict:
    """Risk of every deterministic policy ``(a for state 0, a for state 1, ...)``.

    Computed from the tables directly, without the softmax; the critic term
    is ignored (it depends on theta, not on the policy).
    """
    eps = enumerate_episodes(env, horizon)
    out = {}
    for choice in itertools.product(range(env.n_actions), repeat=env.n_states):
        total = 0.0
        for u in eps:
            if any(choice[s] != a for s, a in zip(u.states, u.actions)):
                continue
            p = env.initial[u.s_o]
            c = 0.0
            for s, a, s2 in zip(u.states, u.actions, u.states[1:]):
                p *= env.transition[s, a, s2]
                c += cost.table[s, a, s2]
            total += p * c
        out[choice] = total
    return out


def train_active(
    env: ActiveEnvironment,
    initial,
    cost: ActiveCost,
    schedule: StepSizeSchedule,
    max_iters: int,
    seed: int = 0,
    horizon: int = 1,
    baseline: float = 0.0,
    **run_kwargs,
) -> core.Trajectory:
    """Policy-gradient SA: one episode per iteration, sampled under the current policy."""
    return core.run(
        initial,
        schedule,
        policy_search_direction(env, cost, baseline),
        EpisodeSampler(env, horizon),
        max_iters=max_iters,
        oracle=run_kwargs.pop("oracle", active_oracle(env, cost, horizon, baseline)),
        seed=seed,
        **run_kwargs,
    )
