import numpy as np
import pytest

from sdsa.gibbs import FiniteGibbsModel


class ZeroSchedule:
    """gamma identically zero; the public schedule type only emits positive steps."""

    family = "zero"

    def step_size(self, k):
        return 0.0


@pytest.fixture
def zero_schedule():
    return ZeroSchedule()


@pytest.fixture
def two_state_model():
    """States x1=[0], x2=[1] with V(x1)=0, V(x2)=ln 3 (theta-free)."""
    return FiniteGibbsModel(
        [[0.0], [1.0]],
        energy=lambda xs, th: np.log(3.0) * xs[:, 0],
        energy_grad=lambda xs, th: np.zeros((len(xs), 1)),
        q=1,
    )


@pytest.fixture
def boltzmann4():
    return FiniteGibbsModel.boltzmann(4)


@pytest.fixture
def boltzmann2():
    return FiniteGibbsModel.boltzmann(2)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
