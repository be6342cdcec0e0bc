import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kenn.timeseries import Series, generate_synthetic

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# acceptance criteria append (number, title, ok, detail) here; printed at the end
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}")


@pytest.fixture(scope="session")
def seasonal():
    """Default synthetic series used across modules (seed 7, 100 days)."""
    return generate_synthetic(4800, 48, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

