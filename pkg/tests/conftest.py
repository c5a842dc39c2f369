import numpy as np
import pytest

from rtvlab.media import Frame, SyntheticSpec, synth_sequence


@pytest.fixture(scope="session")
def small_clip():
    """Twelve 64x48 textured frames moving (2, 1) px per frame."""
    return synth_sequence(SyntheticSpec(width=64, height=48), 12).frames


@pytest.fixture(scope="session")
def medium_clip():
    return synth_sequence(SyntheticSpec(width=160, height=96), 40).frames


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _flat_frame(value, w=32, h=32, index=0):
    return Frame.from_luma(np.full((h, w), value, dtype=np.uint8), index)


@pytest.fixture
def flat_frame():
    """Factory for a constant-luma frame."""
    return _flat_frame


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[num])
