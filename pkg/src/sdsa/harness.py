"""Experiment configuration, trajectory files and the run/check/sweep drivers."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from . import core
from .risk import central_difference, relative_error
from .schedules import StepSizeSchedule
from .testbeds import ALGORITHMS, REGISTRY, Problem, UnknownKeyError, build

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "SDSA_OUTPUT_DIR"
MAX_SEED = 2 ** 64 - 1
CHECKS = ("gradient", "downhill", "schedule")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str
    model_key: str
    max_iters: int
    model_params: dict = field(default_factory=dict)
    schedule: StepSizeSchedule | None = None
    m: int = 1
    seed: int = 0
    record_interval: int = 100
    tolerance: float = 1e-2
    output: str = "trajectory.csv"
    stop_on_converge: bool = False
    flip_direction: bool = False
    monitor_radius: float = core.DEFAULT_MONITOR_RADIUS
    record_all: bool = False

    def validate(self) -> ExperimentConfig:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.model_key not in REGISTRY:
            raise UnknownKeyError(self.model_key)
        expected = REGISTRY[self.model_key][0]
        if expected != self.algorithm:
            raise ConfigError(f"model {self.model_key!r} is a {expected} testbed, not {self.algorithm}")
        if not (isinstance(self.seed, int) and 0 <= self.seed <= MAX_SEED):
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")
        if self.record_interval < 1:
            raise ConfigError(f"record_interval must be >= 1, got {self.record_interval}")
        if not self.tolerance > 0:
            raise ConfigError(f"tolerance must be positive, got {self.tolerance}")
        if not self.monitor_radius > 0:
            raise ConfigError(f"monitor_radius must be positive, got {self.monitor_radius}")
        return self

    def to_dict(self) -> dict:
        run = {
            "m": self.m,
            "max_iters": self.max_iters,
            "seed": self.seed,
            "record_interval": self.record_interval,
            "tolerance": self.tolerance,
            "output": self.output,
            "stop_on_converge": self.stop_on_converge,
            "flip_direction": self.flip_direction,
            "monitor_radius": self.monitor_radius,
            "record_all": self.record_all,
        }
        out = {"algorithm": self.algorithm, "model": {"key": self.model_key, **self.model_params}, "run": run}
        if self.schedule is not None:
            out["schedule"] = self.schedule.to_dict()
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentConfig:
        doc = dict(doc)
        extra = set(doc) - {"algorithm", "model", "schedule", "run"}
        if extra:
            raise ConfigError(f"unknown top-level config keys: {sorted(extra)}")
        try:
            model = dict(doc["model"])
            key = model.pop("key")
            run = dict(doc["run"])
            algorithm = doc["algorithm"]
        except KeyError as e:
            raise ConfigError(f"config is missing {e}") from None
        names = {f.name for f in dataclasses.fields(cls)} - {"algorithm", "model_key", "model_params", "schedule"}
        unknown = set(run) - names
        if unknown:
            raise ConfigError(f"unknown [run] keys: {sorted(unknown)}")
        if "max_iters" not in run:
            raise ConfigError("[run] needs max_iters")
        schedule = None
        if "schedule" in doc:
            try:
                schedule = StepSizeSchedule.from_dict(doc["schedule"])
            except (ValueError, TypeError) as e:
                raise ConfigError(f"bad [schedule]: {e}") from None
        return cls(algorithm=algorithm, model_key=key, model_params=model, schedule=schedule, **run)

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)


def parse_config(text: str) -> ExperimentConfig:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"config is not valid TOML: {e}") from None
    return ExperimentConfig.from_dict(doc)


def serialize_config(config: ExperimentConfig) -> str:
    return tomli_w.dumps(config.to_dict())


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


# trajectory files

def _fmt(x) -> str:
    return "" if x is None else format(float(x), ".17g")


def trajectory_header(q: int) -> list[str]:
    return ["t", "gamma", "loss", "inner_product"] + [f"theta_{i}" for i in range(q)]


def write_trajectory(trajectory: core.Trajectory, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    q = trajectory.records[0].theta.size
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trajectory_header(q))
        for r in trajectory.records:
            w.writerow([str(r.t), _fmt(r.gamma), _fmt(r.loss), _fmt(r.inner_product)] + [_fmt(v) for v in r.theta])
    return path


def read_trajectory(path) -> core.Trajectory:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    q = len(header) - 4
    if header != trajectory_header(q):
        raise ValueError(f"unexpected trajectory header {header}")
    opt = lambda s: None if s == "" else float(s)  # noqa: E731
    records = []
    for row in body:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} columns, expected {len(header)}")
        records.append(core.Record(int(row[0]), np.array([float(v) for v in row[4:]]), float(row[1]),
                                   opt(row[2]), opt(row[3])))
    return core.Trajectory(records)


# drivers

@dataclass
class RunResult:
    trajectory: core.Trajectory
    path: Path
    seed: int
    converged: bool
    wall_time: float

    @property
    def final_loss(self):
        return self.trajectory.final.loss

    @property
    def final_inner_product(self):
        return self.trajectory.final.inner_product

    @property
    def status(self) -> str:
        return self.trajectory.status

    def summary(self) -> str:
        return (
            f"seed={self.seed} status={self.status} iterations={self.trajectory.final.t} "
            f"final_loss={_fmt(self.final_loss) or 'nan'} "
            f"final_inner_product={_fmt(self.final_inner_product) or 'nan'} "
            f"converged={str(self.converged).lower()} wall_time={self.wall_time:.3f}s"
        )


def problem_for(config: ExperimentConfig) -> Problem:
    config.validate()
    try:
        return build(config.model_key, config.model_params)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _direction_and_oracle(config: ExperimentConfig, problem: Problem):
    direction, oracle = problem.direction, problem.oracle
    if config.flip_direction:
        direction = direction.flipped()
        base = oracle
        oracle = core.Oracle(base.loss, base.grad, lambda th: -base.dbar(th))
    return direction, oracle


def resolve_output(config: ExperimentConfig, out: str | os.PathLike | None = None) -> Path:
    if out is not None:
        return Path(out)
    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    if env_dir:
        return Path(env_dir) / Path(config.output).name
    return Path(config.output)


def run_experiment(config: ExperimentConfig, out=None) -> RunResult:
    """Run the configured training and write its trajectory file."""
    problem = problem_for(config)
    direction, oracle = _direction_and_oracle(config, problem)
    schedule = config.schedule or problem.schedule
    start = time.perf_counter()
    traj = core.run(
        problem.initial,
        schedule,
        direction,
        problem.sampler,
        max_iters=config.max_iters,
        m=config.m,
        stop_tol=config.tolerance if config.stop_on_converge else None,
        monitor=core.BoundednessMonitor(config.monitor_radius),
        oracle=oracle,
        seed=config.seed,
        record_interval=config.record_interval,
        record_all=config.record_all,
    )
    wall = time.perf_counter() - start
    path = write_trajectory(traj, resolve_output(config, out))
    ip = traj.final.inner_product
    converged = traj.status != core.A2_VIOLATED and ip is not None and abs(ip) < config.tolerance
    return RunResult(traj, path, config.seed, converged, wall)


@dataclass(frozen=True)
class CheckItem:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def check_gradient(config: ExperimentConfig, n_points: int = 20, tol: float = 1e-6) -> list[CheckItem]:
    """Oracle gradient against central finite differences of the oracle loss."""
    problem = problem_for(config)
    rng = np.random.default_rng(config.seed)
    items = []
    for i in range(n_points):
        theta = rng.standard_normal(problem.q)
        err = relative_error(problem.oracle.grad(theta), central_difference(problem.oracle.loss, theta))
        items.append(CheckItem(f"gradient[{i}]", err < tol, f"relative error {err:.3e} (tol {tol:g})"))
    return items


def check_downhill_grid(config: ExperimentConfig, slack: float = 1e-12) -> list[CheckItem]:
    """Exact ``g . dbar`` on the testbed's grid; passes when the value is <= 0 up to roundoff ``slack``."""
    problem = problem_for(config)
    direction, oracle = _direction_and_oracle(config, problem)
    report = core.check_downhill(direction, oracle.grad, problem.theta_grid, expected_direction=oracle.dbar)
    return [
        CheckItem(f"downhill[{i}]", pt.downhill(slack), f"g.dbar = {pt.value:.6e}")
        for i, pt in enumerate(report)
    ]


def check_schedule(config: ExperimentConfig) -> list[CheckItem]:
    problem = problem_for(config)
    schedule = config.schedule or problem.schedule
    v = schedule.classify()
    return [
        CheckItem("sum_diverges", v.sum_diverges, f"{schedule.family}: sum gamma_t = inf is {v.sum_diverges}"),
        CheckItem("sum_squares_converges", v.sum_squares_converges,
                  f"{schedule.family}: sum gamma_t^2 < inf is {v.sum_squares_converges}"),
    ]


def run_check(config: ExperimentConfig, check: str) -> list[CheckItem]:
    if check not in CHECKS:
        raise ConfigError(f"unknown check {check!r}; expected one of {CHECKS}")
    return {"gradient": check_gradient, "downhill": check_downhill_grid, "schedule": check_schedule}[check](config)


def seed_output(path: Path, seed: int) -> Path:
    return path.with_name(f"{path.stem}.seed{seed}{path.suffix}")


@dataclass
class SweepEntry:
    seed: int
    result: RunResult | None = None
    error: str | None = None

    def line(self) -> str:
        if self.error is not None:
            return f"seed={self.seed} status=error message={self.error}"
        return self.result.summary()


def _sweep_one(config: ExperimentConfig, seed: int, out: Path) -> SweepEntry:
    try:
        return SweepEntry(seed, run_experiment(config.replace(seed=seed), out=seed_output(out, seed)))
    except Exception as e:  # one failing seed must not abort the sweep
        return SweepEntry(seed, error=f"{type(e).__name__}: {e}")


def sweep(config: ExperimentConfig, seeds, jobs: int = 1, out=None) -> list[SweepEntry]:
    """Run every seed; entries come back sorted by seed."""
    seeds = sorted(set(int(s) for s in seeds))
    if not seeds:
        raise ConfigError("sweep needs at least one seed")
    config.validate()
    base = resolve_output(config, out)
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(_sweep_one, [config] * len(seeds), seeds, [base] * len(seeds)))
    else:
        entries = [_sweep_one(config, s, base) for s in seeds]
    return entries


def fraction_converged(entries: list[SweepEntry]) -> float:
    ok = sum(1 for e in entries if e.result is not None and e.result.converged)
    return ok / len(entries) if entries else math.nan
