"""Step-size schedules for stochastic approximation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

FAMILIES = ("constant", "darken_search_converge", "power_decay")


class ScheduleValidity(NamedTuple):
    sum_diverges: bool
    sum_squares_converges: bool

    @property
    def robbins_monro(self) -> bool:
        return self.sum_diverges and self.sum_squares_converges


@dataclass(frozen=True)
class StepSizeSchedule:
    """A positive step-size sequence ``gamma_k``.

    ``constant``: ``gamma0`` for every k.
    ``darken_search_converge``: ``gamma0 * (k/tau + 1) / ((k/tau)**2 + k/tau + 1)``,
    roughly flat while ``k < tau`` and decaying like ``gamma0 * tau / k`` afterwards.
    ``power_decay``: ``gamma0 / (1 + k)**exponent``.
    """

    family: str
    gamma0: float
    tau: float | None = None
    exponent: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown schedule family {self.family!r}; expected one of {FAMILIES}")
        if not self.gamma0 > 0:
            raise ValueError(f"gamma0 must be positive, got {self.gamma0}")
        if self.family == "darken_search_converge":
            if self.tau is None or not self.tau > 0:
                raise ValueError(f"darken schedule needs a positive tau, got {self.tau}")
        if self.family == "power_decay":
            if self.exponent is None or not 0 < self.exponent <= 1:
                raise ValueError(f"power_decay exponent must lie in (0, 1], got {self.exponent}")

    @classmethod
    def constant(cls, gamma0: float) -> StepSizeSchedule:
        return cls("constant", float(gamma0))

    @classmethod
    def darken(cls, gamma0: float, tau: float) -> StepSizeSchedule:
        return cls("darken_search_converge", float(gamma0), tau=float(tau))

    @classmethod
    def power(cls, gamma0: float, exponent: float) -> StepSizeSchedule:
        return cls("power_decay", float(gamma0), exponent=float(exponent))

    def step_size(self, k: int) -> float:
        if k < 0:
            raise ValueError(f"iteration index must be non-negative, got {k}")
        if self.family == "constant":
            return self.gamma0
        if self.family == "darken_search_converge":
            r = k / self.tau
            return self.gamma0 * (r + 1.0) / (r * r + r + 1.0)
        return self.gamma0 / (1.0 + k) ** self.exponent

    def classify(self) -> ScheduleValidity:
        return classify_schedule(self)

    def to_dict(self) -> dict:
        out = {"family": self.family, "gamma0": self.gamma0}
        if self.tau is not None:
            out["tau"] = self.tau
        if self.exponent is not None:
            out["exponent"] = self.exponent
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> StepSizeSchedule:
        known = {"family", "gamma0", "tau", "exponent"}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown schedule keys: {sorted(extra)}")
        if "family" not in doc or "gamma0" not in doc:
            raise ValueError("schedule needs 'family' and 'gamma0'")
        tau = doc.get("tau")
        exponent = doc.get("exponent")
        return cls(
            doc["family"],
            float(doc["gamma0"]),
            tau=None if tau is None else float(tau),
            exponent=None if exponent is None else float(exponent),
        )


def step_size(schedule: StepSizeSchedule, k: int) -> float:
    return schedule.step_size(k)


def classify_schedule(schedule: StepSizeSchedule) -> ScheduleValidity:
    """Analytic Robbins-Monro classification of a schedule family.

    Decided from the tail behaviour of each family rather than by summing:
    darken decays like ``1/k`` and ``power_decay`` like ``k**-p``, so the sum
    diverges for every family and the squares converge iff the tail decays
    faster than ``k**-1/2``.
    """
    if schedule.family == "constant":
        return ScheduleValidity(True, False)
    if schedule.family == "darken_search_converge":
        return ScheduleValidity(True, True)
    return ScheduleValidity(True, schedule.exponent > 0.5)
