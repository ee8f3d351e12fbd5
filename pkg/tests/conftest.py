import os

# Make an 8-worker pool available before numba is first imported, so the
# determinism tests can compare 1 and 8 threads even on small machines.
os.environ.setdefault("NUMBA_NUM_THREADS", "8")


import math  # noqa: E402

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from hypflow import geometry as geo  # noqa: E402

TWO_PI = 2.0 * math.pi


def conformal_metric(grid, amplitude=0.1, kind="product"):
    X = grid.coords()
    if kind == "single":
        phi = amplitude * np.sin(X[0])
    else:
        phi = amplitude * np.sin(X[0]) * np.cos(X[1])
    return geo.identity_field(grid) * np.exp(2.0 * phi)


def sample(fn, grid):
    return fn(*grid.coords())


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def random_spd(rng, n, shape=(), spread=0.3):
    """Random symmetric positive definite matrices (components first)."""
    A = rng.normal(size=(n, n) + shape) * spread
    M = np.einsum("ik...,jk...->ij...", A, A)
    for i in range(n):
        M[i, i] += 1.0
    return M


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


def pytest_configure(config):
    # registered here rather than in pyproject: resolving the category imports
    # numba, which must not happen before the environment above is set
    config.addinivalue_line("filterwarnings", "ignore:.*TBB threading layer.*:numba.core.errors.NumbaWarning")
