import numpy as np
import pytest

from rnfilter.network import Reaction, ReactionNetwork, builtin_network


def immigration_death(k1=10.0, k2=1.0, omega=1.0):
    return ReactionNetwork(("X",), (Reaction({}, {"X": 1}, k1, "birth"),
                                    Reaction({"X": 1}, {}, k2, "death")), omega)


@pytest.fixture(scope="session")
def bistable():
    return builtin_network("bistable")


@pytest.fixture(scope="session")
def limitcycle():
    return builtin_network("limitcycle")


@pytest.fixture(scope="session")
def birth_death():
    return immigration_death()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, n, scale=1.0):
    M = rng.normal(size=(n, n))
    return scale * (M @ M.T + 0.1 * np.eye(n))


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
