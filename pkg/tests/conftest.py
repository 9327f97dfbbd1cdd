import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from bppcd import kernels  # noqa: E402
from bppcd.chain import TimeGrid  # noqa: E402


@pytest.fixture(scope="session", autouse=True)
def warm_jit():
    """Compile the kernels once so timing-sensitive tests measure steady state."""
    ll = np.zeros((3, 2))
    lt = np.log(np.full((2, 2, 2), 0.5))
    la = kernels.forward(ll, lt)
    kernels.backward(ll, lt)
    kernels.backward_sample(la, lt, np.full((1, 3), 0.5))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_grid(rng, n_times, span_days=3650.0):
    days = np.sort(rng.choice(np.arange(1, int(span_days)), size=n_times - 1, replace=False))
    return TimeGrid.from_raw(np.concatenate([[0.0], days.astype(float)]))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
