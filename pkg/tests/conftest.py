import numpy as np
import pytest

from nlwblowup.conformal import solve_fg
from nlwblowup.solver import SolverConfig, picard_solve, setup_problem
from nlwblowup.surface import catalog_surface, solve_h


@pytest.fixture(scope="session")
def flat_map():
    return solve_fg(solve_h(catalog_surface("flat:1", half_width=4.0)), order=6, s_max=0.5)


@pytest.fixture(scope="session")
def tilt_map():
    return solve_fg(solve_h(catalog_surface("tilt:0.5", half_width=4.0)), order=6, s_max=0.5)


@pytest.fixture(scope="session")
def gauss_map():
    return solve_fg(solve_h(catalog_surface("gauss:0.3,1.0", half_width=6.0)), order=12, s_max=0.5)


@pytest.fixture(scope="session")
def flat_solution():
    surface = catalog_surface("flat:1")
    return picard_solve(surface, SolverConfig(p=3.0, J=9, ny=128, s0=0.2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config._criterion_lines = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion."""

    def record(label, ok, detail):
        line = f"criterion {label}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        request.config._criterion_lines.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criterion_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
