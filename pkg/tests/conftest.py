import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ttosc.model import SystemConfig

settings.register_profile("ttosc", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ttosc")


@pytest.fixture
def small_cfg():
    return SystemConfig.generate(M=3, J=6, seed=3, K=3, T=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    acc = __import__("sys").modules.get("acceptance_support")
    if acc is None or not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(acc.RESULTS):
        terminalreporter.write_line(acc.RESULTS[num])
