import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from sensorsentry.scenes import make_scene, write_scenes  # noqa: E402

settings.register_profile(
    "default", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.function_scoped_fixture]
)
settings.load_profile("default")

SMALL = (48, 64)


@pytest.fixture(scope="session")
def scene():
    return make_scene(3, SMALL)


@pytest.fixture(scope="session")
def five_scenes():
    return [make_scene(10 + k, SMALL) for k in range(5)]


@pytest.fixture(scope="session")
def micro_dataset(tmp_path_factory):
    """Four small scenes on disk with paired depth maps."""
    root = tmp_path_factory.mktemp("micro")
    imgs, deps = write_scenes(root, 4, seed=5, size=SMALL)
    return root, imgs, deps


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
