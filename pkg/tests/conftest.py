import numpy as np
import pytest

from hcope.mdp import TabularMdp, TabularPolicy, random_mdp, random_policy


def constant_mdp(c=1.0, gamma=0.5, r_max=1.0):
    return TabularMdp(np.ones((1, 1, 1)), np.full((1, 1), c), np.full((1, 1), c), np.ones((1, 1)),
                      np.ones(1), gamma, r_max, name="constant")


@pytest.fixture
def small_problem():
    """Seeded 3-state, 2-action MDP with distinct target and behavior policies."""
    mdp = random_mdp(3, 2, seed=1, gamma=0.9)
    return mdp, random_policy(3, 2, 2), random_policy(3, 2, 3)


@pytest.fixture
def one_state():
    return constant_mdp(0.7, gamma=0.9), TabularPolicy(np.ones((1, 1)))


_ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line; call with (number, ok, detail) before asserting."""

    def record(number, ok, detail):
        _ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'} | {detail}")
