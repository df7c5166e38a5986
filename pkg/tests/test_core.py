import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdsa import core
from sdsa.core import (
    A2_VIOLATED,
    BoundednessMonitor,
    ConstantSampler,
    FiniteSampler,
    Oracle,
    Record,
    SearchDirection,
    Trajectory,
    check_convergence_to_H,
    check_downhill,
    run,
    sa_step,
)
from sdsa.schedules import StepSizeSchedule
from sdsa.testbeds import build


class StreamSampler(core.Sampler):
    """Returns 1, 2, 3, ... in call order."""

    bound = 100.0

    def __init__(self):
        self.n = 0

    def draw(self, theta, rng):
        self.n += 1
        return np.array([float(self.n)])


class RecordingSampler(core.Sampler):
    bound = np.inf

    def __init__(self):
        self.draws = []

    def draw(self, theta, rng):
        x = rng.standard_normal(1)
        self.draws.append(x[0])
        return x


identity = SearchDirection(lambda x, th: x.copy())


def contraction_parts():
    direction = SearchDirection(lambda x, th: -2.0 * th)
    oracle = Oracle(loss=lambda th: float(th @ th), grad=lambda th: 2 * th)
    return direction, ConstantSampler([0.0]), oracle


def test_zero_direction_leaves_theta():
    theta = np.array([0.3, -1.2, 5.0])
    zero = SearchDirection(lambda x, th: np.zeros_like(th))
    out = sa_step(theta, 3, StepSizeSchedule.constant(0.7), zero, ConstantSampler([1.0]), m=4)
    np.testing.assert_array_equal(out, theta)


def test_single_sample_step():
    out = sa_step(np.zeros(1), 0, StepSizeSchedule.constant(0.5), identity, ConstantSampler([2.0]))
    assert out[0] == 1.0


def test_minibatch_step_averages_stream():
    out = sa_step(np.zeros(1), 0, StepSizeSchedule.constant(1.0), identity, StreamSampler(), m=4)
    assert out[0] == pytest.approx(2.5, abs=1e-15)


def test_minibatch_must_be_positive():
    with pytest.raises(ValueError):
        sa_step(np.zeros(1), 0, StepSizeSchedule.constant(1.0), identity, ConstantSampler([1.0]), m=0)


def test_nonfinite_direction_is_an_error():
    bad = SearchDirection(lambda x, th: np.array([np.nan]))
    with pytest.raises(core.NonFiniteDirectionError, match="sample"):
        sa_step(np.zeros(1), 0, StepSizeSchedule.constant(1.0), bad, ConstantSampler([7.0]))


def test_sampler_bound_violation_is_an_error():
    sampler = core.FunctionSampler(lambda th, rng: np.array([5.0]), bound=1.0)
    with pytest.raises(core.SampleBoundError):
        sa_step(np.zeros(1), 0, StepSizeSchedule.constant(1.0), identity, sampler)


def test_declared_direction_bound_enforced():
    d = SearchDirection(lambda x, th: 10 * x, bound=1.0)
    with pytest.raises(core.SampleBoundError):
        d(np.array([1.0]), np.zeros(1))


def test_zero_dimensional_theta_rejected():
    with pytest.raises(ValueError):
        core.as_parameter_vector([])
    with pytest.raises(ValueError):
        core.as_parameter_vector(1.0)
    with pytest.raises(ValueError):
        core.as_parameter_vector([np.inf])


def test_changing_m_keeps_other_draws():
    s1, s2 = RecordingSampler(), RecordingSampler()
    sched = StepSizeSchedule.constant(0.0 + 1e-9)
    zero = SearchDirection(lambda x, th: np.zeros_like(th))
    for t in range(5):
        sa_step(np.zeros(1), t, sched, zero, s1, m=1, seed=9)
        sa_step(np.zeros(1), t, sched, zero, s2, m=3, seed=9)
    # sample j=0 of every iteration is identical regardless of m
    assert s1.draws == s2.draws[0::3]


def test_run_rejects_zero_iterations():
    direction, sampler, _ = contraction_parts()
    with pytest.raises(ValueError):
        run([1.0], StepSizeSchedule.constant(0.25), direction, sampler, max_iters=0)


def test_run_one_iteration_has_two_records():
    direction, sampler, _ = contraction_parts()
    traj = run([1.0], StepSizeSchedule.constant(0.25), direction, sampler, max_iters=1)
    assert [r.t for r in traj.records] == [0, 1]


def test_contraction_closed_form():
    direction, sampler, oracle = contraction_parts()
    traj = run([1.0], StepSizeSchedule.constant(0.25), direction, sampler, max_iters=50, oracle=oracle,
               record_all=True)
    # hand-computed: theta <- theta - 0.25 * 2 * theta = theta / 2
    first = [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125]
    np.testing.assert_allclose([r.theta[0] for r in traj.records[:6]], first, atol=1e-12, rtol=0)
    np.testing.assert_allclose(traj.thetas[:, 0], 0.5 ** np.arange(51), atol=1e-12, rtol=0)
    assert check_convergence_to_H(traj, oracle, 1e-6).converged


def test_record_bookkeeping():
    direction, sampler, _ = contraction_parts()
    sched = StepSizeSchedule.darken(0.2, 10)
    traj = run([1.0], sched, direction, sampler, max_iters=1050, record_interval=100)
    ts = [r.t for r in traj.records]
    assert ts == list(range(0, 1001, 100)) + [1050]
    assert all(r.gamma == sched.step_size(r.t) for r in traj.records)
    assert all(r.gamma > 0 for r in traj.records)


def test_run_is_deterministic():
    problem = build("quadratic")
    kwargs = dict(max_iters=500, oracle=problem.oracle, seed=123, record_interval=7)
    a = run(problem.initial, problem.schedule, problem.direction, problem.sampler, **kwargs)
    b = run(problem.initial, problem.schedule, problem.direction, problem.sampler, **kwargs)
    c = run(problem.initial, problem.schedule, problem.direction, problem.sampler, **{**kwargs, "seed": 124})
    assert a.equals(b)
    assert not a.equals(c)


def test_stop_rule_halts_early():
    direction, sampler, oracle = contraction_parts()
    traj = run([1.0], StepSizeSchedule.constant(0.25), direction, sampler, max_iters=1000, oracle=oracle,
               stop_tol=1e-6, record_interval=1)
    assert traj.status == core.CONVERGED
    # |g.dbar| = 4 theta^2 = 4 * 0.25**t < 1e-6 first at t = 11
    assert traj.final.t == 11


def test_monitor_flags_divergence():
    problem = build("quadratic")
    monitor = BoundednessMonitor()
    traj = run(problem.initial, StepSizeSchedule.constant(1.0), problem.direction.flipped(), problem.sampler,
               max_iters=10_000, monitor=monitor, seed=0)
    assert traj.status == A2_VIOLATED
    assert monitor.violated and monitor.first_violation_t == traj.final.t < 10_000
    assert np.linalg.norm(traj.final.theta) > monitor.radius


def test_monitor_quiet_inside_ball():
    m = BoundednessMonitor(radius=2.0)
    assert m.observe(0, np.array([1.0, 1.0]))
    assert not m.violated
    assert not m.observe(1, np.array([3.0, 0.0]))
    assert not m.observe(2, np.array([4.0, 0.0]))
    assert m.first_violation_t == 1


def test_check_downhill_negative_gradient_direction():
    grad = lambda th: np.array([2 * th[0], 6 * th[1]])  # noqa: E731
    d = SearchDirection(lambda x, th: -grad(th))
    grid = [np.array([1.0, -2.0]), np.array([0.0, 0.0]), np.array([-0.5, 0.1])]
    report = check_downhill(d, grad, grid, sampler=ConstantSampler([0.0]), n_mc=10)
    for pt in report:
        g = grad(pt.theta)
        assert pt.exact == pytest.approx(-(g @ g), abs=1e-14)
        assert pt.downhill()
    assert report[1].exact == 0.0


def test_check_downhill_exact_matches_mc_on_four_state_model(boltzmann2):
    # l(theta) = log Z(theta): g = E[phi]; d(x) = -phi(x) so dbar = -g
    model = boltzmann2
    feats = lambda xs: -model.energy_grad(np.atleast_2d(xs), None)  # noqa: E731
    sampler = FiniteSampler(model.states, model.probs)
    d = SearchDirection(lambda x, th: -feats(x)[0])
    grad = lambda th: model.probs(th) @ feats(model.states)  # noqa: E731
    theta = np.array([0.4, -1.1, 0.8])
    [pt] = check_downhill(d, grad, [theta], sampler=sampler, n_mc=100_000, seed=5)
    assert pt.exact < 0
    assert abs(pt.estimate - pt.exact) < 4 * pt.std_error


def test_convergence_check_not_converged_at_start():
    _, _, oracle = contraction_parts()
    traj = Trajectory([Record(0, np.array([1.0]), 0.25)])
    rep = check_convergence_to_H(traj, oracle, 1e-6)
    assert not rep.converged
    assert rep.final_inner_product == pytest.approx(-4.0)


def test_quadratic_darken_converges():
    problem = build("quadratic")
    traj = run(problem.initial, StepSizeSchedule.darken(0.25, 100), problem.direction, problem.sampler,
               max_iters=10_000, oracle=problem.oracle, seed=2)
    assert check_convergence_to_H(traj, problem.oracle, 1e-4).converged


def test_robbins_siegmund_diagnostic():
    problem = build("quadratic")
    traj = run(problem.initial, problem.schedule, problem.direction, problem.sampler, max_iters=10_000,
               oracle=problem.oracle, seed=4, record_interval=10)
    assert core.tail_oscillation(traj, 0.1) < 1e-3


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_downhill_preserved_for_negative_gradient(theta, other):
    for key in ("quadratic", "logistic"):
        problem = build(key)
        report = check_downhill(problem.direction, problem.oracle.grad, [theta, other],
                                expected_direction=problem.oracle.dbar)
        for pt in report:
            g = problem.oracle.grad(pt.theta)
            assert pt.exact <= 0
            assert pt.exact == pytest.approx(-(g @ g), rel=1e-9, abs=1e-15)


def test_enumerated_direction():
    sampler = FiniteSampler([[1.0], [3.0]], np.array([0.25, 0.75]))
    d = core.enumerated_direction(identity, sampler, np.zeros(1))
    assert d[0] == pytest.approx(2.5)
