import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vsslam.backend import bundle_adjustment
from vsslam.geometry import CameraIntrinsics

settings.register_profile("repo", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def k500():
    return CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


@pytest.fixture
def k_small():
    return CameraIntrinsics(250.0, 250.0, 159.5, 119.5, 320, 240)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_collection_modifyitems(config, items):
    # acceptance criteria run last so the BA health check covers the whole suite
    items.sort(key=lambda item: item.module.__name__ == "test_acceptance")


def pytest_terminal_summary(terminalreporter):
    s = bundle_adjustment.STATS
    terminalreporter.write_line(
        f"BA health: {s['solves']} solves, {s['accepted_steps']} accepted LM steps, "
        f"{s['violations']} cost increases")
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
