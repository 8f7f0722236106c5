import numpy as np
import pytest

from stagddd.simlab.dgp import DgpSpec, generate


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def stag_cov():
    return generate(DgpSpec("staggered-cov", 1, 3000, seed=11))


@pytest.fixture(scope="session")
def stag_nocov():
    return generate(DgpSpec("staggered-nocov", 1, 3000, seed=11, nu_variant="s3"))


@pytest.fixture(scope="session")
def two_period():
    return generate(DgpSpec("two-period", 1, 3000, seed=11))


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(LINES):
            terminalreporter.write_line(LINES[number])
