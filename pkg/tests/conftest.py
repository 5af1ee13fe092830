import numpy as np
import pytest

from dttrack import autodiff as ad


@pytest.fixture(autouse=True)
def _clean_state():
    """Each test starts in 32-bit mode with an empty computation record."""
    ad.set_precision("f32")
    ad.discard_record()
    yield
    ad.set_precision("f32")
    ad.discard_record()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_line():
    """Record one summary line per acceptance criterion; printed after the run."""
    return _ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance summary")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
