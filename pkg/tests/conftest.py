import numpy as np
import pytest

from lfcam.core import Dims

# one PASS/FAIL line per acceptance criterion, printed after the test run
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_record():
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_dims():
    """Smallest interesting configuration: 2x2 views, 2 time units, 16x16."""
    return Dims(n_u=2, n_v=2, n_x=16, n_y=16, n_t=2)


@pytest.fixture
def desk_dims():
    """Desk-scale configuration used by the toy benchmarks."""
    return Dims(n_u=3, n_v=3, n_x=32, n_y=32, n_t=2)


def random_field(dims: Dims, rng, dtype=np.float32) -> np.ndarray:
    return rng.random(dims.shape).astype(dtype)
