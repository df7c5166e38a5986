"""Generic state-dependent stochastic approximation.

The iteration is

    theta(k+1) = theta(k) + (gamma_k / m) * sum_j d(x_j, theta(k)),

where every ``x_j`` is drawn from a sampler whose distribution may depend on
the current ``theta(k)``.  Diagnostics track the inner product between the
risk gradient ``g`` and the expected search direction ``dbar``; iterates are
expected to approach the set where ``g(theta) . dbar(theta) == 0``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .schedules import StepSizeSchedule

log = logging.getLogger(__name__)

A2_VIOLATED = "A2 violated"
CONVERGED = "converged"
COMPLETED = "completed"

DEFAULT_MONITOR_RADIUS = 1e10


class NonFiniteDirectionError(FloatingPointError):
    """The search direction returned NaN or Inf."""


class SampleBoundError(ValueError):
    """A sampler or direction broke its declared bound."""


def as_parameter_vector(values) -> np.ndarray:
    theta = np.array(values, dtype=float).reshape(-1) if np.ndim(values) else None
    if theta is None or theta.size == 0:
        raise ValueError("parameter vector must have dimension q >= 1")
    if not np.all(np.isfinite(theta)):
        raise ValueError(f"parameter vector has non-finite entries: {theta}")
    return theta


def sample_rng(seed: int, t: int, j: int = 0) -> np.random.Generator:
    """Generator for sample ``j`` of iteration ``t``.

    Streams are keyed on ``(t, j)`` instead of being consumed sequentially, so
    changing the mini-batch size leaves the draws of other samples untouched.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(t, j))))


class Sampler:
    """Draws ``x ~ p_x(. | theta)``.

    Subclasses implement :meth:`draw`.  Samplers over a finite space may also
    implement :meth:`support`, returning every sample with its probability.
    """

    bound: float = math.inf

    def draw(self, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def support(self, theta: np.ndarray):
        return None

    def reset(self) -> None:
        """Forget any chain state (only persistent samplers carry one)."""


class FunctionSampler(Sampler):
    def __init__(self, fn: Callable, bound: float = math.inf):
        self.fn = fn
        self.bound = bound

    def draw(self, theta, rng):
        return np.asarray(self.fn(theta, rng), dtype=float)


class ConstantSampler(Sampler):
    def __init__(self, value):
        self.value = np.atleast_1d(np.asarray(value, dtype=float))
        self.bound = float(np.linalg.norm(self.value))

    def draw(self, theta, rng):
        return self.value.copy()

    def support(self, theta):
        return self.value[None, :], np.ones(1)


class FiniteSampler(Sampler):
    """Exact draws from a fixed or theta-dependent distribution over finite points."""

    def __init__(self, points, probs: np.ndarray | Callable):
        self.points = np.asarray(points, dtype=float)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        self._probs = probs
        self.bound = float(np.max(np.linalg.norm(self.points, axis=1)))

    def probs(self, theta):
        p = self._probs(theta) if callable(self._probs) else self._probs
        return np.asarray(p, dtype=float)

    def draw(self, theta, rng):
        p = self.probs(theta)
        idx = rng.choice(len(self.points), p=p)
        return self.points[idx].copy()

    def support(self, theta):
        return self.points, self.probs(theta)


@dataclass(frozen=True)
class SearchDirection:
    """Search direction ``d(x, theta)``, optionally with a declared bound ``|d| <= bound``."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    bound: float | None = None

    def __call__(self, x, theta):
        d = np.asarray(self.fn(x, theta), dtype=float)
        if d.shape != np.shape(theta):
            raise ValueError(f"direction has shape {d.shape}, expected {np.shape(theta)}")
        if not np.all(np.isfinite(d)):
            raise NonFiniteDirectionError(f"non-finite search direction {d} at sample {x!r}")
        if self.bound is not None and np.linalg.norm(d) > self.bound * (1 + 1e-12):
            raise SampleBoundError(
                f"|d| = {np.linalg.norm(d):.6g} exceeds declared bound {self.bound} at sample {x!r}"
            )
        return d

    def flipped(self) -> SearchDirection:
        fn = self.fn
        return SearchDirection(lambda x, theta: -np.asarray(fn(x, theta)), self.bound)


@dataclass(frozen=True)
class Oracle:
    """Exact diagnostics for a run: risk, its gradient and the expected direction."""

    loss: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    expected_direction: Callable[[np.ndarray], np.ndarray] | None = None

    def dbar(self, theta):
        if self.expected_direction is None:
            return -self.grad(theta)
        return self.expected_direction(theta)

    def inner_product(self, theta) -> float:
        return float(self.grad(theta) @ self.dbar(theta))


@dataclass
class BoundednessMonitor:
    """Empirical check that the iterates stay inside ``|theta| <= radius``."""

    radius: float = DEFAULT_MONITOR_RADIUS
    violated: bool = False
    first_violation_t: int | None = None

    def observe(self, t: int, theta: np.ndarray) -> bool:
        norm = float(np.linalg.norm(theta))
        if not norm <= self.radius:  # NaN counts as a violation
            if not self.violated:
                self.violated = True
                self.first_violation_t = t
            return False
        return True


@dataclass(frozen=True)
class Record:
    t: int
    theta: np.ndarray
    gamma: float
    loss: float | None = None
    inner_product: float | None = None


@dataclass
class Trajectory:
    records: list[Record] = field(default_factory=list)
    status: str = COMPLETED

    def __len__(self):
        return len(self.records)

    @property
    def final(self) -> Record:
        return self.records[-1]

    @property
    def thetas(self) -> np.ndarray:
        return np.array([r.theta for r in self.records])

    @property
    def losses(self) -> np.ndarray:
        return np.array([np.nan if r.loss is None else r.loss for r in self.records])

    def equals(self, other: Trajectory) -> bool:
        """Bit-for-bit equality of every record."""
        if self.status != other.status or len(self) != len(other):
            return False
        for a, b in zip(self.records, other.records):
            if (a.t, a.gamma, a.loss, a.inner_product) != (b.t, b.gamma, b.loss, b.inner_product):
                return False
            if a.theta.tobytes() != b.theta.tobytes():
                return False
        return True


def sa_step(
    theta: np.ndarray,
    k: int,
    schedule: StepSizeSchedule,
    direction: SearchDirection,
    sampler: Sampler,
    m: int = 1,
    seed: int = 0,
) -> np.ndarray:
    if m < 1:
        raise ValueError(f"mini-batch size must be >= 1, got {m}")
    total = np.zeros_like(theta)
    for j in range(m):
        x = sampler.draw(theta, sample_rng(seed, k, j))
        if np.linalg.norm(x) > sampler.bound * (1 + 1e-12):
            raise SampleBoundError(f"sample {x!r} exceeds declared bound {sampler.bound}")
        total += direction(x, theta)
    return theta + (schedule.step_size(k) / m) * total


def run(
    initial,
    schedule: StepSizeSchedule,
    direction: SearchDirection,
    sampler: Sampler,
    *,
    max_iters: int,
    m: int = 1,
    stop_tol: float | None = None,
    monitor: BoundednessMonitor | None = None,
    oracle: Oracle | None = None,
    seed: int = 0,
    record_interval: int = 100,
    record_all: bool = False,
) -> Trajectory:
    """Iterate :func:`sa_step` from ``initial``.

    Iterate 0, every ``record_interval``-th iterate and the last one are
    recorded (every iterate when ``record_all``).  With an oracle attached each
    record carries the loss and ``g . dbar``; if ``stop_tol`` is also given the
    run halts at the first record with ``|g . dbar| < stop_tol``.  Leaving the
    monitor's ball ends the run with status :data:`A2_VIOLATED`.
    """
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    if record_interval < 1:
        raise ValueError(f"record_interval must be >= 1, got {record_interval}")
    theta = as_parameter_vector(initial)
    monitor = monitor if monitor is not None else BoundednessMonitor()
    sampler.reset()
    traj = Trajectory()

    def record(t):
        loss = ip = None
        if oracle is not None:
            loss = float(oracle.loss(theta))
            ip = oracle.inner_product(theta)
        traj.records.append(Record(t, theta.copy(), schedule.step_size(t), loss, ip))
        return ip

    record(0)
    for t in range(max_iters):
        with np.errstate(over="ignore", invalid="ignore"):
            theta = sa_step(theta, t, schedule, direction, sampler, m, seed)
        if not monitor.observe(t + 1, theta):
            log.info("iterate %d left the ball of radius %g", t + 1, monitor.radius)
            traj.records.append(Record(t + 1, theta.copy(), schedule.step_size(t + 1)))
            traj.status = A2_VIOLATED
            return traj
        if record_all or (t + 1) % record_interval == 0 or t + 1 == max_iters:
            ip = record(t + 1)
            if stop_tol is not None and ip is not None and abs(ip) < stop_tol:
                traj.status = CONVERGED
                return traj
    return traj


@dataclass(frozen=True)
class DownhillPoint:
    theta: np.ndarray
    estimate: float | None
    std_error: float | None
    exact: float | None

    @property
    def value(self) -> float:
        return self.exact if self.exact is not None else self.estimate

    def downhill(self, slack: float = 0.0) -> bool:
        return self.value <= slack


def check_downhill(
    direction: SearchDirection,
    grad_fn: Callable[[np.ndarray], np.ndarray],
    theta_grid: Sequence,
    *,
    sampler: Sampler | None = None,
    expected_direction: Callable[[np.ndarray], np.ndarray] | None = None,
    n_mc: int = 1000,
    seed: int = 0,
) -> list[DownhillPoint]:
    """Evaluate ``g(theta) . dbar(theta)`` over a grid of parameter values.

    Exact mode uses ``expected_direction`` if given, else the sampler's
    enumerated support.  With a sampler, a Monte Carlo estimate of the same
    quantity (mean and standard error over ``n_mc`` draws) is reported too.
    """
    if sampler is None and expected_direction is None:
        raise ValueError("need a sampler, an expected direction, or both")
    if sampler is not None and n_mc < 1:
        raise ValueError(f"n_mc must be >= 1, got {n_mc}")
    report = []
    for i, theta in enumerate(theta_grid):
        theta = as_parameter_vector(theta)
        g = np.asarray(grad_fn(theta), dtype=float)
        exact = estimate = se = None
        if expected_direction is not None:
            exact = float(g @ expected_direction(theta))
        elif sampler is not None and sampler.support(theta) is not None:
            xs, ps = sampler.support(theta)
            dbar = sum(p * direction(x, theta) for x, p in zip(xs, ps))
            exact = float(g @ dbar)
        if sampler is not None:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(i,))))
            vals = np.array([g @ direction(sampler.draw(theta, rng), theta) for _ in range(n_mc)])
            estimate = float(vals.mean())
            se = float(vals.std(ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else math.inf
        report.append(DownhillPoint(theta, estimate, se, exact))
    return report


@dataclass(frozen=True)
class ConvergenceReport:
    converged: bool
    final_inner_product: float


def check_convergence_to_H(trajectory: Trajectory, oracle: Oracle, tol: float) -> ConvergenceReport:
    theta = trajectory.final.theta
    if not np.all(np.isfinite(theta)):
        return ConvergenceReport(False, math.nan)
    ip = oracle.inner_product(theta)
    return ConvergenceReport(abs(ip) < tol, ip)


def tail_oscillation(trajectory: Trajectory, fraction: float = 0.1) -> float:
    """Spread (max - min) of the recorded loss over the final ``fraction`` of iterations.

    An empirical stand-in for the loss sequence settling down; not a proof of
    almost-sure convergence.
    """
    last_t = trajectory.final.t
    cutoff = last_t - fraction * last_t
    tail = [r.loss for r in trajectory.records if r.t >= cutoff and r.loss is not None]
    if not tail:
        raise ValueError("trajectory has no recorded losses in its tail")
    return max(tail) - min(tail)


def deterministic_descent(
    grad_fn: Callable[[np.ndarray], np.ndarray],
    theta0,
    step: float,
    tol: float = 1e-10,
    max_iters: int = 200_000,
) -> np.ndarray:
    """Full-batch gradient descent ``theta <- theta - step * g(theta)`` until ``|g| < tol``."""
    theta = as_parameter_vector(theta0)
    for _ in range(max_iters):
        g = grad_fn(theta)
        if np.linalg.norm(g) < tol:
            return theta
        theta = theta - step * g
    raise RuntimeError(f"descent did not reach |g| < {tol} in {max_iters} iterations (|g| = {np.linalg.norm(g):.3g})")


def enumerated_direction(direction: SearchDirection, sampler: Sampler, theta) -> np.ndarray:
    """``dbar(theta) = sum_x d(x, theta) p_x(x | theta)`` over the sampler's finite support."""
    support = sampler.support(theta)
    if support is None:
        raise ValueError("sampler does not expose a finite support")
    xs, ps = support
    return sum(p * direction(x, theta) for x, p in zip(xs, ps))
