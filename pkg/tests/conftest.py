from functools import lru_cache

import numpy as np
import pytest

from hamnoise.hamiltonian import build_atlas
from hamnoise.models import harmonic, make_model, pendulum
from hamnoise.pipeline import analyze, scenario


@lru_cache(maxsize=None)
def scenario_analysis(name: str):
    return analyze(scenario(name))


@pytest.fixture(scope="session")
def analysis():
    return scenario_analysis


@pytest.fixture(scope="session")
def pendulum_atlas():
    return build_atlas(pendulum())


@pytest.fixture(scope="session")
def harmonic_atlas():
    return build_atlas(harmonic())


@pytest.fixture(scope="session")
def ex1_case1():
    return make_model("ex1", dict(a=-2.0, b=0.5, c=1.0, p=2, q=2, h=2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
