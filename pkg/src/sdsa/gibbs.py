"""Gibbs densities over finite, enumerable sample spaces.

``p(x | theta) = exp(-V(x; theta)) / Z(theta)`` with ``Z`` summed exactly over
the sample space, so every expectation has an exact enumeration value.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.special import expit, logsumexp


def binary_states(n: int) -> np.ndarray:
    """All ``2**n`` vectors in ``{0, 1}**n``, first coordinate most significant."""
    return np.array(list(itertools.product((0.0, 1.0), repeat=n)))


def boltzmann_features(states: np.ndarray) -> np.ndarray:
    """Singletons followed by all pairwise products ``x_i * x_j`` (i < j)."""
    states = np.atleast_2d(states)
    n = states.shape[1]
    pairs = [states[:, i] * states[:, j] for i, j in itertools.combinations(range(n), 2)]
    return np.column_stack([states] + pairs)


@dataclass(frozen=True)
class GibbsChainState:
    current: int
    steps_taken: int = 0


class FiniteGibbsModel:
    """Energy model on an enumerated sample space.

    ``energy(states, theta)`` returns one energy per row of ``states`` and
    ``energy_grad(states, theta)`` the matching ``(n, q)`` array of
    ``dV/dtheta``.
    """

    def __init__(self, states, energy: Callable, energy_grad: Callable, q: int):
        self.states = np.array(states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if len(self.states) < 2:
            raise ValueError("sample space needs at least two states")
        self.energy = energy
        self.energy_grad = energy_grad
        self.q = int(q)
        self._index = {tuple(s): i for i, s in enumerate(self.states)}
        if len(self._index) != len(self.states):
            raise ValueError("sample space has duplicate states")

    @classmethod
    def linear(cls, states, features: Callable) -> FiniteGibbsModel:
        """``V(x; theta) = -theta . phi(x)``."""
        states = np.asarray(states, dtype=float)
        q = np.atleast_2d(features(states[:1])).shape[1]
        return cls(
            states,
            energy=lambda xs, theta: -features(xs) @ theta,
            energy_grad=lambda xs, theta: -features(xs),
            q=q,
        )

    @classmethod
    def boltzmann(cls, n_units: int = 4) -> FiniteGibbsModel:
        """Fully connected binary Boltzmann machine, ``q = n + n(n-1)/2``."""
        return cls.linear(binary_states(n_units), boltzmann_features)

    @property
    def size(self) -> int:
        return len(self.states)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def index_of(self, x) -> int:
        try:
            return self._index[tuple(np.asarray(x, dtype=float).reshape(-1))]
        except KeyError:
            raise ValueError(f"{x!r} is not in the sample space") from None

    def energies(self, theta) -> np.ndarray:
        v = np.asarray(self.energy(self.states, np.asarray(theta, dtype=float)), dtype=float)
        bad = np.flatnonzero(~np.isfinite(v))
        if bad.size:
            raise FloatingPointError(f"non-finite energy {v[bad[0]]} at state {self.states[bad[0]]}")
        return v

    def log_partition(self, theta) -> float:
        return float(logsumexp(-self.energies(theta)))

    def partition_function(self, theta) -> float:
        return float(np.exp(self.log_partition(theta)))

    def log_probs(self, theta) -> np.ndarray:
        neg = -self.energies(theta)
        return neg - logsumexp(neg)

    def probs(self, theta) -> np.ndarray:
        return np.exp(self.log_probs(theta))

    def density(self, x, theta) -> float:
        return float(self.probs(theta)[self.index_of(x)])

    def exact_expectation(self, theta, f: Callable) -> np.ndarray:
        """``sum_x f(x) p(x | theta)``; ``f`` maps the ``(n, d)`` state array to ``(n,)`` or ``(n, k)``."""
        vals = np.asarray(f(self.states), dtype=float)
        return np.tensordot(self.probs(theta), vals, axes=(0, 0))

    def expected_energy_grad(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return self.probs(theta) @ self.energy_grad(self.states, theta)

    def sample_indices(self, theta, rng: np.random.Generator, size=None):
        cdf = np.cumsum(self.probs(theta))
        cdf[-1] = 1.0
        u = rng.random(size)
        return np.searchsorted(cdf, u, side="right")

    def exact_sample(self, theta, rng: np.random.Generator) -> np.ndarray:
        return self.states[int(self.sample_indices(theta, rng))].copy()

    # single-site Gibbs updates, binary spaces only

    @property
    def is_binary(self) -> bool:
        return self.size == 2 ** self.dim and bool(np.all((self.states == 0) | (self.states == 1)))

    def _require_binary(self):
        if not self.is_binary:
            raise ValueError("Gibbs sweeps need the full binary sample space {0,1}^d")

    @cached_property
    def _flip(self) -> np.ndarray:
        # _flip[i, s] = index of state s with site i toggled
        flip = np.empty((self.dim, self.size), dtype=int)
        for s, x in enumerate(self.states):
            for i in range(self.dim):
                y = x.copy()
                y[i] = 1.0 - y[i]
                flip[i, s] = self._index[tuple(y)]
        return flip

    def sweep_order(self) -> list[int]:
        """Palindromic scan ``0, 1, ..., d-1, ..., 1, 0``; reversible, unlike a one-way scan."""
        return list(range(self.dim)) + list(range(self.dim - 2, -1, -1))

    def site_update(self, s: int, i: int, energies, flip, rng) -> int:
        x_i = self.states[s, i]
        other = flip[i, s]
        # P(site i = 1 | rest)
        e1, e0 = (energies[s], energies[other]) if x_i == 1 else (energies[other], energies[s])
        p1 = expit(e0 - e1)
        want = 1.0 if rng.random() < p1 else 0.0
        return s if want == x_i else other

    def gibbs_sweep(self, chain: GibbsChainState, theta, rng: np.random.Generator,
                    energies=None) -> GibbsChainState:
        """One sweep of single-site conditional resampling; leaves ``p(. | theta)`` invariant."""
        self._require_binary()
        if not 0 <= chain.current < self.size:
            raise ValueError(f"chain state {chain.current} out of range")
        if energies is None:
            energies = self.energies(theta)
        flip = self._flip
        s = chain.current
        for i in self.sweep_order():
            s = self.site_update(s, i, energies, flip, rng)
        return GibbsChainState(s, chain.steps_taken + 1)

    def sweep_transition_matrix(self, theta) -> np.ndarray:
        """Exact one-sweep transition matrix ``P[a, b]`` built from the single-site kernels."""
        self._require_binary()
        energies = self.energies(theta)
        flip = self._flip
        P = np.eye(self.size)
        for i in self.sweep_order():
            K = np.zeros((self.size, self.size))
            for s in range(self.size):
                o = flip[i, s]
                # conditional probability of keeping the current value of site i
                keep = expit(energies[o] - energies[s])
                K[s, s] += keep
                K[s, o] += 1.0 - keep
            P = P @ K
        return P
