import hypothesis
import numpy as np
import pytest

from lowrank_bandits import make_instance

hypothesis.settings.register_profile("default", max_examples=60, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("default")



@pytest.fixture
def rank_one():
    """u = (0.9, 0.3), v = (0.8, 0.2)."""
    return make_instance([0.9, 0.3], [0.8, 0.2])


@pytest.fixture
def rank_two():
    base = np.array([[0.85, 0.1], [0.1, 0.85]])
    mix = np.array([[1, 0], [0, 1], [0.6, 0.3], [0.2, 0.7], [0.45, 0.45]])
    return make_instance(mix @ base, mix @ base)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
