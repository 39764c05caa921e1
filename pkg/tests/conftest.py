import numpy as np
import pytest

from catpose.geometry import CameraIntrinsics
from catpose.synth.scene import DEFAULT_CATEGORIES, generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def intrinsics():
    return CameraIntrinsics(577.5, 577.5, 319.5, 239.5)


@pytest.fixture(scope="session")
def small_dataset():
    """Two instances per category, shared by tests that only read it."""
    return generate_dataset(DEFAULT_CATEGORIES, n_per_category=2, seed=7, n_pixels=64, n_prior=32)


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion."""
    lines = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            if (rep.when == "call" or status == "error") and "test_acceptance.py" in rep.nodeid:
                name = rep.nodeid.rsplit("::", 1)[-1]
                lines.append((name, "PASS" if status == "passed" else "FAIL"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, verdict in sorted(lines):
            terminalreporter.write_line(f"{verdict}  {name}")
