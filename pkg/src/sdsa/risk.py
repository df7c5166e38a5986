"""Exact risk, gradient and Hessian diagnostics on finite sample spaces.

Two kinds of environment are supported.  In a passive one the sampling
distribution ``p_o`` is fixed and ``grad l = sum_x grad c(x, theta) p_o(x)``.
In an active one the distribution ``p_x(. | theta)`` moves with the
parameters and the gradient picks up a second term,
``sum_x c(x, theta) grad p_x(x | theta)``; dropping it gives the wrong answer.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

PASSIVE = "passive"
ACTIVE = "active"


def fd_step(theta: np.ndarray) -> np.ndarray:
    return 1e-5 * np.maximum(1.0, np.abs(theta))


def central_difference(f: Callable[[np.ndarray], float], theta) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    theta = np.asarray(theta, dtype=float)
    h = fd_step(theta)
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h[i]
        out[i] = (f(theta + e) - f(theta - e)) / (2 * h[i])
    return out


def central_jacobian(f: Callable[[np.ndarray], np.ndarray], theta) -> np.ndarray:
    """``J[i, j] = d f_i / d theta_j`` by central differences."""
    theta = np.asarray(theta, dtype=float)
    h = fd_step(theta)
    cols = []
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h[j]
        cols.append((np.asarray(f(theta + e)) - np.asarray(f(theta - e))) / (2 * h[j]))
    return np.column_stack(cols)


def relative_error(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


@dataclass(frozen=True)
class RiskOracle:
    """Enumerated risk ``l(theta) = sum_x c(x, theta) p(x [| theta])``.

    All callables are vectorised over the whole sample space: ``cost(theta)``
    gives shape ``(S,)``, ``cost_grad(theta)`` ``(S, q)``, ``probs`` is either a
    fixed ``(S,)`` array (passive) or ``theta -> (S,)``, and ``score(theta)``
    gives ``grad log p(x | theta)`` with shape ``(S, q)`` (active only).
    """

    mode: str
    cost: Callable[[np.ndarray], np.ndarray]
    cost_grad: Callable[[np.ndarray], np.ndarray]
    probs: Callable[[np.ndarray], np.ndarray] | np.ndarray
    score: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.mode not in (PASSIVE, ACTIVE):
            raise ValueError(f"mode must be 'passive' or 'active', got {self.mode!r}")
        if self.mode == ACTIVE and self.score is None:
            raise ValueError("active mode needs the score grad log p(x | theta)")

    def p(self, theta) -> np.ndarray:
        return np.asarray(self.probs(theta) if callable(self.probs) else self.probs, dtype=float)

    def risk(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return float(self.p(theta) @ self.cost(theta))

    def passive_grad(self, theta) -> np.ndarray:
        """Single-term gradient ``sum_x grad c(x, theta) p(x)``."""
        theta = np.asarray(theta, dtype=float)
        return self.p(theta) @ self.cost_grad(theta)

    def score_term(self, theta) -> np.ndarray:
        """``sum_x c(x, theta) grad p(x | theta)``, using ``grad p = p grad log p``."""
        theta = np.asarray(theta, dtype=float)
        if self.mode == PASSIVE:
            return np.zeros_like(theta)
        return (self.p(theta) * self.cost(theta)) @ self.score(theta)

    def risk_grad(self, theta) -> np.ndarray:
        return self.passive_grad(theta) + self.score_term(theta)

    def hessian(self, theta) -> np.ndarray:
        return central_jacobian(self.risk_grad, theta)

    def hessian_bound(self, lower, upper, spacing: float = 0.5) -> float:
        return risk_hessian_bound(self, lower, upper, spacing)


def lattice_grid(lower, upper, spacing: float) -> np.ndarray:
    """Points of ``spacing * Z**q`` inside the box.

    Anchoring the grid on a fixed lattice makes grids of nested boxes nested,
    so a maximum over the grid cannot shrink as the box grows.  An axis whose
    interval misses the lattice falls back to its midpoint.
    """
    lower, upper = np.atleast_1d(lower).astype(float), np.atleast_1d(upper).astype(float)
    if lower.shape != upper.shape or np.any(lower > upper):
        raise ValueError("box needs lower <= upper with matching shapes")
    axes = []
    for lo, hi in zip(lower, upper):
        ks = np.arange(np.ceil(lo / spacing - 1e-9), np.floor(hi / spacing + 1e-9) + 1)
        pts = ks * spacing
        axes.append(pts if pts.size else np.array([(lo + hi) / 2]))
    return np.array(list(itertools.product(*axes)))


def risk_hessian_bound(oracle: RiskOracle, lower, upper, spacing: float = 0.5) -> float:
    """Largest ``max_i sum_j |H_ij|`` over a lattice grid in the box.

    The max row-sum norm bounds the spectral norm of the (symmetric) Hessian.
    A grid maximum is a diagnostic estimate of boundedness, not a certificate.
    """
    best = 0.0
    for theta in lattice_grid(lower, upper, spacing):
        H = oracle.hessian(theta)
        best = max(best, float(np.max(np.sum(np.abs(H), axis=1))))
    return best
