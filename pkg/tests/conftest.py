import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from macensemble import kernel

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(params=kernel.available_backends())
def backend(request):
    """Run the test once per available product backend."""
    previous = kernel.get_backend()
    kernel.set_backend(request.param)
    yield request.param
    kernel.set_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_predictions(rng, s, n, c, lo=1e-7, hi=1 - 1e-7):
    return rng.uniform(lo, hi, size=(s, n, c))


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
