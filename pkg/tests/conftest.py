import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dtoffload import reference_config

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance verdict lines, printed once at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def ref_cfg():
    return reference_config()


@pytest.fixture
def small_cfg():
    """Five devices, two small cells, a tiny network: quick end-to-end runs."""
    return reference_config().replace(
        network={"n_devices": 5, "n_sbs": 2},
        training={"hidden": (8, 8, 8), "episodes": 2, "episode_len": 10, "t_max": 5})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
