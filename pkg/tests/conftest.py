import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from jointsparse.model import MultiTaskDataset

settings.register_profile(
    "default", max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("quick", max_examples=20, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(number, title, passed, detail)``."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(number, title, passed, detail=""):
        lines.append((number, title, bool(passed), detail))

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(lines, key=lambda x: x[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}  {detail}".rstrip())


def random_dataset(rng, m=3, d=4, n=6):
    designs = [rng.standard_normal((n, d)) for _ in range(m)]
    responses = [rng.standard_normal(n) for _ in range(m)]
    return MultiTaskDataset.from_arrays(designs, responses)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
