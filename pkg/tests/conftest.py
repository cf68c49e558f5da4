from __future__ import annotations

import functools

import pytest

from cellsim.coupled import picard_solve
from cellsim.mesh import CellMesh
from cellsim.params import DimensionlessParameters

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (passed, detail)
    print(f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}")


@functools.lru_cache(maxsize=None)
def solved(gamma=0.5, delta=1.0, sigma=0.0, U=1.0, nr=32, ntheta=16, **extra):
    """Cached coupled solve; the tests treat the returned state as read-only."""
    params = DimensionlessParameters(gamma=gamma, delta=delta, sigma=sigma, U=U, **extra)
    return picard_solve(params, CellMesh(gamma, nr, ntheta))


@pytest.fixture(scope="session")
def solve():
    return solved
