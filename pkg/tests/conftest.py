import numpy as np
import pytest

from voxcor.grid import FeatureVolume, Mask, Volume

# one line per acceptance criterion, shown in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_volume(data, spacing=(1.0, 1.0, 1.0)):
    return Volume(np.asarray(data, dtype=np.float32), spacing)


def make_feature(data, spacing=(1.0, 1.0, 1.0)):
    return FeatureVolume(np.asarray(data, dtype=np.float32), spacing)


def make_mask(data, spacing=(1.0, 1.0, 1.0)):
    return Mask(np.asarray(data, dtype=bool), spacing)
