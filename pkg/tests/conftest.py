import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from threadpoolctl import threadpool_limits

from frpan.resample import SensorProfile
from frpan.synth import SceneSpec, gen_scene, simulate_pair

settings.register_profile(
    "repo", deadline=None, max_examples=40, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("repo")


@pytest.fixture(scope="session", autouse=True)
def single_thread_blas():
    # bit-exact determinism checks and timing assume one BLAS thread
    with threadpool_limits(1):
        yield


@pytest.fixture(scope="session")
def profile():
    return SensorProfile()


@pytest.fixture(scope="session")
def small_scene(profile):
    """64x64 PAN-scale scene with its aligned pair."""
    m0 = gen_scene(SceneSpec(seed=3, size=(64, 64)))
    p0, m1, shifts = simulate_pair(m0, profile)
    return m0, p0, m1, shifts


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
