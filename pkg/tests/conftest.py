import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spikeslab import PriorSpec, draw_instance
from spikeslab.model import gen_gaussian_matrix

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def small_instance(d=8, n=40, q=0.25, sigma=0.5, seed=0, diffuse="gaussian"):
    X = gen_gaussian_matrix(n, d, [seed, 1])
    return draw_instance(PriorSpec.uniform(d, q, diffuse), X, sigma, [seed, 2])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = sorted(getattr(mod, "RESULTS", []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
