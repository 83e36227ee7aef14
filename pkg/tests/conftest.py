import numpy as np
import pytest

from rdmol.expr import Expression
from rdmol.mol import ProblemSpec


def make_default_spec(**overrides):
    params = dict(
        k1=1.0, k_minus1=2.0, kA=0.1, kB=0.15, kC=0.2,
        a0=Expression("2 + cos(pi*x)"), b0=Expression("1 + 0.5*cos(2*pi*x)"), c0=Expression("0.5*(1 - x*(1 - x))"),
        T=1.0,
    )
    params.update(overrides)
    return ProblemSpec(**params)


@pytest.fixture
def default_spec():
    return make_default_spec()


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
