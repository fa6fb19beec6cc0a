import numpy as np
import pytest

from panofuse.geometry import generate_trajectory, intrinsics_from_fov
from panofuse.synth import BoxScene


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def room():
    return BoxScene()


@pytest.fixture(scope="session")
def flat_room():
    return BoxScene(checker_count=0)


@pytest.fixture(scope="session")
def small_traj():
    return generate_trajectory(8, (-45.0, 0.0, 45.0), 90.0, 64, 64)


@pytest.fixture
def intr90():
    return intrinsics_from_fov(90.0, 512, 512)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(module.RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
        terminalreporter.write_line(line)
