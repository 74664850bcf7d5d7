import warnings

import numpy as np
import pytest

from genebsde.bounds import GaussianFinalData
from genebsde.model import GeneNetwork, TimeWindow

warnings.filterwarnings("ignore", message=".*TBB.*")

A_532 = [[2.5, -0.2, -0.25], [-0.03, 3.0, -0.3], [-0.5, -0.1, 2.0]]


@pytest.fixture
def net532():
    return GeneNetwork(A_532, [0.5, 0.75, 1.0], [0.2, 0.5, 0.6])


@pytest.fixture
def fd532():
    return GaussianFinalData([5.0, 0.5, 0.3], [150.0, 70.0, 80.0])


@pytest.fixture
def win532():
    return TimeWindow(T=6.0, t=3.0)


@pytest.fixture
def net_sim1():
    A = [[0.1, -2.0, -2.0], [0.0, 0.04, 0.0], [0.0, 0.0, 0.6]]
    return GeneNetwork(A, [0.4, 0.1, 0.3], [1.0, 1.0, 1.0])


@pytest.fixture
def fd_sim1():
    return GaussianFinalData([4.89, 0.47, 0.51], [75.98, 7.84, 8.85])


def uncoupled(nu, rho):
    n = len(nu)
    return GeneNetwork(np.zeros((n, n)), nu, rho)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion(capsys):
    """Record one acceptance line ``criterion k: PASS|FAIL detail``."""

    def record(k: int, ok: bool, detail: str) -> bool:
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[k] = line
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
