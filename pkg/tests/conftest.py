from pathlib import Path

import numpy as np
import pytest

from recalib import Population, load_population

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def pop6() -> Population:
    return load_population(FIXTURES / "pop6.csv")


@pytest.fixture
def pop3() -> Population:
    return load_population(FIXTURES / "pop3.csv")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_population(rng, N, p, strata=None, clusters=None):
    x = rng.normal(2.0, 1.0, size=(N, p))
    y = x @ rng.normal(1.0, 0.5, size=p) + rng.normal(size=N)
    return Population(y, x, strata=strata, clusters=clusters)


# one line per acceptance criterion, echoed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
