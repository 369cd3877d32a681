import numpy as np
import pytest

# Acceptance tests append "criterion NN PASS/FAIL: detail" strings here; the
# terminal summary prints them so the one-line-per-criterion report survives
# output capture.
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def central_diff(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Dense central finite-difference gradient of scalar f at x (float64)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = f(x)
        flat[i] = keep - h
        fm = f(x)
        flat[i] = keep
        gf[i] = (fp - fm) / (2.0 * h)
    return g


@pytest.fixture
def fd():
    return central_diff


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
