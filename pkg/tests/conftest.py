import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from histlogit import Dataset

settings.register_profile("default", max_examples=30, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_dataset(rng, N=200, D=2, K=3, scale=1.0):
    X = rng.normal(size=(N, D))
    y = np.concatenate([np.arange(1, K + 1), rng.integers(1, K + 1, size=N - K)])
    return Dataset(y, X * scale, K)


def random_beta(rng, D, K, model, scale=0.7):
    B = rng.normal(scale=scale, size=(D + 1, K))
    if model in ("M", "multinomial"):
        B[:, -1] = 0.0
    return B


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_addoption(parser):
    parser.addoption("--susy", default=None,
                     help="path to the UCI SUSY csv for the full-data preset check")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record
