import math

import numpy as np
import pytest

from diabolo.search import SearchConfig, search
from diabolo.spin import Biaxial, Cubic, HamiltonianModel, SpinQuantum

HX0 = 2 * math.sqrt(2 * 0.1 * 1.1)
HZ0 = math.sqrt(1 - 0.01)


@pytest.fixture(scope="session")
def biaxial3():
    return HamiltonianModel(SpinQuantum(6), Biaxial(1.0, 0.1))


@pytest.fixture(scope="session")
def cubic2():
    return HamiltonianModel(SpinQuantum(4), Cubic(0.0, 1.0))


@pytest.fixture(scope="session")
def cubic52():
    return HamiltonianModel(SpinQuantum(5), Cubic(0.0, 1.0))


@pytest.fixture(scope="session")
def biaxial3_search(biaxial3):
    return search(biaxial3, SearchConfig())


@pytest.fixture(scope="session")
def cubic2_search(cubic2):
    return search(cubic2, SearchConfig())


@pytest.fixture(scope="session")
def cubic52_search(cubic52):
    return search(cubic52, SearchConfig())


def positions(records):
    return np.array([r.position_array() for r in records])


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
