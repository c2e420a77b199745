import functools

import numpy as np
import pytest

from tttlab.harness.experiments import DeskSetup, train_model

ACCEPTANCE_LINES = []


@functools.lru_cache(maxsize=None)
def desk_data():
    return DeskSetup().data()


@functools.lru_cache(maxsize=None)
def desk_model(seed: int, main_only: bool = False):
    """Desk-scale model trained once per session and shared by every test."""
    model, history = train_model(DeskSetup(), seed, desk_data()[0], main_only=main_only)
    return model, history


@pytest.fixture(scope="session")
def data():
    return desk_data()


@pytest.fixture(scope="session")
def trained():
    """``trained(seed)`` -> jointly trained model (cached; do not mutate)."""
    return lambda seed=0, main_only=False: desk_model(seed, main_only)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
