import csv
from pathlib import Path

import pytest

from tubesol.radial import ProblemParams, linearized_spectrum, solve_ground_state

FIXTURES = Path(__file__).parent / "fixtures"


def read_fixture(name):
    """Rows of a golden CSV as dicts of floats, skipping the config-hash line."""
    with open(FIXTURES / name, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    return [{k: float(v) for k, v in row.items()} for row in rows]


def radial_fixture(n, p):
    for row in read_fixture("radial_oracle.csv"):
        if row["n"] == n and row["p"] == p:
            return row
    raise KeyError((n, p))


@pytest.fixture(scope="session")
def oracle13():
    return radial_fixture(1, 3.0)


@pytest.fixture(scope="session")
def profile13():
    return solve_ground_state(ProblemParams(1, 3.0), tol=1e-12, grid_size=1024)


@pytest.fixture(scope="session")
def fiber13(profile13):
    return linearized_spectrum(profile13, max_mode=1, eigs_per_mode=6)


@pytest.fixture(scope="session")
def tube_profile64():
    return solve_ground_state(ProblemParams(1, 3.0), tol=1e-12, grid_size=64)


@pytest.fixture(scope="session")
def tube_profile128():
    return solve_ground_state(ProblemParams(1, 3.0), tol=1e-12, grid_size=128)


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
