import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from iris_aqa.synthetic import SyntheticConfig, generate_synthetic

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

SMALL = SyntheticConfig(n_records=12, t_valid_range=(40, 60), dim=8, element_windows=(4, 8), jumps=(1, 2), spins=(1, 2))


@pytest.fixture(scope="session")
def small_records():
    return generate_synthetic(SMALL, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# PASS/FAIL lines from tests/test_acceptance.py, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
