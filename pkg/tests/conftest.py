import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hyperred.fom import make_hyperelastic_bar, make_nonlinear_diffusion, solve_fom  # noqa: E402


@pytest.fixture(scope="session")
def diffusion():
    return make_nonlinear_diffusion()


@pytest.fixture(scope="session")
def diffusion_traj(diffusion):
    return solve_fom(diffusion)


@pytest.fixture(scope="session")
def bar():
    return make_hyperelastic_bar()


@pytest.fixture(scope="session")
def bar_traj(bar):
    return solve_fom(bar)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
