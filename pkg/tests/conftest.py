import numpy as np
import pytest

from llformer.model import _Init, named_parameters
from llformer.tensor import Tensor, precision


@pytest.fixture
def f64():
    with precision(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def randomize(params, rng, scale=0.5):
    """Overwrite every weight with N(0, scale^2) so no path is near-degenerate."""
    for _, t in named_parameters(params):
        t.data = (rng.standard_normal(t.shape) * scale).astype(t.dtype)
    return params


def init64(seed=0):
    return _Init(seed, np.float64)


def rand_tensor(rng, *shape):
    return Tensor(rng.standard_normal(shape))


def weighted_sum(y, seed=99):
    """Scalar reduction with random weights so no gradient entry is trivially zero."""
    w = np.random.default_rng(seed).standard_normal(y.shape)
    return (y * Tensor(w, dtype=y.dtype)).sum()


ACCEPTANCE_LINES = []


def report(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
