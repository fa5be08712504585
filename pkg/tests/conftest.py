import numpy as np
import pytest

from xferops.core import DyadicGrid

# acceptance verdicts collected by tests/test_acceptance.py
_CRITERIA = {}
N_CRITERIA = 12


@pytest.fixture
def criterion():
    """record(number, title, passed, detail) for the acceptance summary."""
    def record(num, title, passed, detail=""):
        _CRITERIA[num] = (title, bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for num in range(1, N_CRITERIA + 1):
        if num in _CRITERIA:
            title, ok, detail = _CRITERIA[num]
            tr.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d}: {title}  {detail}")
        else:
            tr.write_line(f"[----] criterion {num:2d}: not run")


@pytest.fixture(scope="session")
def g12():
    return DyadicGrid(12)


@pytest.fixture(scope="session")
def g10():
    return DyadicGrid(10)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def tilted_doubling(grid, h):
    """Non-unital doubling operator R f = h * P(f / h) with P the Haar average.

    Its weights are h(x) / (2 h(tau_j x)), so R h = h exactly on the grid
    while R 1 != 1.
    """
    from xferops.maps import doubling
    from xferops.xferop import BranchIFS, BranchSystem
    branches = ((0.5, 0.0), (0.5, 0.5))
    weights = tuple((lambda x, a=a, b=b: 0.5 * np.real(h.at(x)) / np.real(h.at(a * x + b)))
                    for a, b in branches)
    return BranchIFS(grid, BranchSystem(branches, weights, doubling(), False))


@pytest.fixture(scope="session")
def tilted():
    """(R, h, lambda) with h = 1 + cos(2 pi x) / 2 harmonic and int h dx = 1."""
    from xferops.core import CellMeasure, GridFunction
    g = DyadicGrid(10)
    h = GridFunction.from_callable(g, lambda x: 1.0 + 0.5 * np.cos(2 * np.pi * x))
    return tilted_doubling(g, h), h, CellMeasure.lebesgue(g)
