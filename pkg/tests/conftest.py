import math

import numpy as np
import pytest

from diffhmm.diffusion import preset
from diffhmm.resolvent import discretize_generator, resolvent_direct
from diffhmm.statespace import build_grid

# OU drift certificate: V = x^2/4, C = {|x| <= 2 sqrt 3}, so sup_C V = 3
B_PRIME_OU = 1.5 * math.exp(3.0)


def quarter_square(x):
    return np.asarray(x) ** 2 / 4.0


@pytest.fixture(scope="session")
def ou():
    return preset("ou1d")


@pytest.fixture(scope="session")
def grid():
    """[-6, 6] at h = 0.02 with v = exp(x^2/4)."""
    return build_grid([(-6.0, 6.0)], [601], quarter_square)


@pytest.fixture(scope="session")
def fine_grid():
    """[-6, 6] at h = 0.01."""
    return build_grid([(-6.0, 6.0)], [1201], quarter_square)


@pytest.fixture(scope="session")
def coarse_grid():
    """[-6, 6] at h = 0.05."""
    return build_grid([(-6.0, 6.0)], [241], quarter_square)


@pytest.fixture(scope="session")
def Dh(ou, grid):
    return discretize_generator(ou, grid)


@pytest.fixture(scope="session")
def Dh_fine(ou, fine_grid):
    return discretize_generator(ou, fine_grid)


@pytest.fixture(scope="session")
def Dh_coarse(ou, coarse_grid):
    return discretize_generator(ou, coarse_grid)


@pytest.fixture(scope="session")
def R1(Dh):
    return resolvent_direct(Dh, 1.0)


# ------------------------------------------------------ acceptance report

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(key: str, passed: bool, detail: str) -> bool:
    """Store one acceptance verdict for the end-of-session table."""
    ACCEPTANCE[key] = (bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (not k[-1].isdigit(), int(k.split()[-1]) if k[-1].isdigit() else 0)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key:<12} {'PASS' if ok else 'FAIL'}  {detail}")
