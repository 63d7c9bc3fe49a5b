import sys

import numpy as np
import pytest

from vscout.ardvae import TrainConfig, init_state
from vscout.numerics import make_rng


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_state():
    """4 inputs, 3 hidden units, 2 latent axes."""
    cfg = TrainConfig(hidden=3, latent=2)
    state = init_state(cfg, 4, make_rng(3))
    r = make_rng(4)
    for name, value in state.params.items():
        if value.ndim == 1:
            value[:] = r.normal(0.0, 0.3, value.shape)
    state.alpha = r.uniform(0.5, 2.0, 2)
    return state


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdict lines, which pytest captures per test."""
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "VERDICTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
