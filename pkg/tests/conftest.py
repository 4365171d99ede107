import numpy as np
import pytest

from hlsys.exponents import make_config
from hlsys.radial_grid import make_grid
from hlsys.riesz import build_kernel_table

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def cfg32():
    return make_config(3, 2.0, 5.0)


@pytest.fixture(scope="session")
def grid2000():
    return make_grid(20.0, 2000)


@pytest.fixture(scope="session")
def table32(grid2000):
    return build_kernel_table((3, 2.0), grid2000, jobs=4)


@pytest.fixture(scope="session")
def grid400():
    return make_grid(20.0, 400)


@pytest.fixture(scope="session")
def table32_small(grid400):
    return build_kernel_table((3, 2.0), grid400)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
