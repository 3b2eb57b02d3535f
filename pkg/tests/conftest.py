import numpy as np
import pytest

from agrishade.scene import STATIONS, BUILTIN_LAYOUTS, build_scene


@pytest.fixture(scope="session")
def scenes():
    return {name: build_scene(lay) for name, lay in BUILTIN_LAYOUTS.items()}


@pytest.fixture(scope="session")
def lanna():
    return STATIONS["lanna"]


@pytest.fixture
def rng():
    return np.random.default_rng(20180621)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        terminalreporter.write_line(results[num])
