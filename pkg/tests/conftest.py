"""Shared solved problems and the acceptance summary hook."""

from __future__ import annotations

import pytest

from tfwlab.analysis import DefectFields
from tfwlab.functional import ModelParams
from tfwlab.grid import Grid1D
from tfwlab.nuclear import gaussian_comb, gaussian_perturbation, jellium, superpose, uniform_bump
from tfwlab.solver import staggered_solve

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


class DefectCase:
    """Reference and perturbed solves of one defect problem."""

    def __init__(self, grid, m1, nu, params):
        self.grid, self.m1, self.nu, self.params = grid, m1, nu, params
        self.m2 = superpose(m1, nu)
        self.r1 = staggered_solve(m1, params)
        self.r2 = staggered_solve(self.m2, params)
        self.fields = DefectFields.from_results(self.r1, self.r2, nu, params)


@pytest.fixture(scope="session")
def small_bump():
    """Jellium with a narrow bump on a short cell, for unit tests."""
    grid = Grid1D(5.0, 1024)
    return DefectCase(grid, jellium(grid, 1.0), uniform_bump(grid, 0.0, 0.05, 10.0), ModelParams.tfw())


@pytest.fixture(scope="session")
def jellium_bump():
    """Jellium(1) with a bump of height 10 and width 0.05 on L = 10, N = 2048."""
    grid = Grid1D(10.0, 2048)
    return DefectCase(grid, jellium(grid, 1.0), uniform_bump(grid, 0.0, 0.05, 10.0), ModelParams.tfw())


def _comb_defect(params):
    grid = Grid1D(10.0, 2000)
    return DefectCase(grid, gaussian_comb(grid, 0.1), gaussian_perturbation(grid, 0.5, 0.1), params)


@pytest.fixture(scope="session")
def comb_defect_tfw():
    return _comb_defect(ModelParams.tfw())


@pytest.fixture(scope="session")
def comb_defect_tfwd():
    return _comb_defect(ModelParams.tfwd())
