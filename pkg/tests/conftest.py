import numpy as np
import pytest

from gapweaver import compute_coefficients
from gapweaver.cme2d import solve_class
from gapweaver.potential import PeriodicPotential


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: runs for minutes (acceptance criteria)")


@pytest.fixture(scope="session")
def cosine():
    return PeriodicPotential.one_minus_cos()


@pytest.fixture(scope="session")
def coeffs(cosine):
    return compute_coefficients(cosine)


@pytest.fixture(scope="session")
def b2_field(coeffs):
    """A solved two-component class B-ii soliton on a coarse grid."""
    return solve_class("B-ii", 1.9, coeffs, D=20.0, dy=0.4)


@pytest.fixture(scope="session")
def a0_field(coeffs):
    return solve_class("A-m0", 1.3, coeffs, D=30.0, dy=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  C{key}: {detail}")
