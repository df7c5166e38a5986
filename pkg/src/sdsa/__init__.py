"""State-dependent stochastic approximation: generic iterator, exact oracles and four learning rules."""

from .core import (
    A2_VIOLATED,
    BoundednessMonitor,
    Oracle,
    SearchDirection,
    Trajectory,
    check_convergence_to_H,
    check_downhill,
    run,
    sa_step,
)
from .schedules import StepSizeSchedule, classify_schedule, step_size

__all__ = [
    "A2_VIOLATED",
    "BoundednessMonitor",
    "Oracle",
    "SearchDirection",
    "StepSizeSchedule",
    "Trajectory",
    "check_convergence_to_H",
    "check_downhill",
    "classify_schedule",
    "run",
    "sa_step",
    "step_size",
]

__version__ = "0.1.0"
