import numpy as np
import pytest

from vsdr import ModelParameters, find_equilibrium
from vsdr.reduction import generate_step_battery

ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> bool:
    """Log one acceptance line; printed again in the terminal summary."""
    line = f"{criterion} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def params():
    return ModelParameters()


@pytest.fixture(scope="session")
def op(params):
    return find_equilibrium(params=params)


@pytest.fixture(scope="session")
def battery():
    return generate_step_battery()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
