import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("ci", deadline=None, max_examples=50, derandomize=True)
settings.load_profile("ci")

# Per-criterion acceptance lines, echoed after capture ends so they always
# appear in the terminal output (see test_acceptance.report).
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def positive_table(rng, n, k, concentration=1.0, floor=1e-6):
    """A random strictly positive probability table with exact row sums."""
    from opeselect.core import PolicyTable

    probs = rng.dirichlet(np.full(k, concentration), size=n) + floor
    return PolicyTable(probs / probs.sum(axis=1, keepdims=True))


def random_instance(rng, n, k, concentration=1.0):
    """A random (target, behavior, actions, labels) instance with positive rows."""
    target = positive_table(rng, n, k, concentration, floor=1e-6)
    behavior = positive_table(rng, n, k, 2.0, floor=1e-3)
    actions = rng.integers(1, k + 1, size=n)
    labels = rng.integers(1, k + 1, size=n)
    return target, behavior, actions, labels
