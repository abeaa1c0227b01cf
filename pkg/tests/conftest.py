import numpy as np
import pytest

from helpers import ball_qp


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    setattr(item, "rep_" + rep.when, rep)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def qp():
    return ball_qp()
