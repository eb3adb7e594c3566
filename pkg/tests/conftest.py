import numpy as np
import pytest

from snmap.fixtures import bm1, bounded_variation, mm2, random_defective_spec
from snmap.scale import ScaleSet


@pytest.fixture(scope="session")
def ss_bm1():
    return ScaleSet(bm1())


@pytest.fixture(scope="session")
def ss_mm2():
    return ScaleSet(mm2())


@pytest.fixture(scope="session")
def ss_bv():
    return ScaleSet(bounded_variation())


@pytest.fixture(scope="session", params=range(1, 6), ids=lambda s: f"random{s}")
def ss_random(request):
    return ScaleSet(random_defective_spec(request.param))


def maxabs(M):
    return float(np.max(np.abs(M)))


ACCEPTANCE_LINES = []


def record_acceptance(number, passed, message):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {message}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
