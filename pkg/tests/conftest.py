import math

import numpy as np
import pytest

from adagrad_bias.analysis import example31_data
from adagrad_bias.model import Hyperparams, LossModel

# filled by the acceptance suite, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def random_separable(rng, n, p):
    """Constraints with a planted margin; returns an (n, p) array."""
    s = rng.standard_normal(p)
    s /= np.linalg.norm(s)
    z = rng.standard_normal((n, p))
    m = z @ s
    z -= np.minimum(m, 0.0)[:, None] * 2.0 * s
    z += np.maximum(0.1 - np.abs(m), 0.0)[:, None] * s
    return z


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ex31_theta60():
    return example31_data(math.pi / 3)


@pytest.fixture(scope="session")
def ex31_runs():
    """Long AdaGrad and GD runs on the mirrored pair at theta = pi/3 (shared, read-only)."""
    from adagrad_bias.optim import run

    data = example31_data(math.pi / 3)
    model = LossModel.exponential()
    hp = Hyperparams(eta=0.05, epsilon=1e-8, max_iters=1_000_000)
    ada = run("adagrad", model, data, hp, thinning=1000)
    gd = run("gd", model, data, hp, thinning=1000)
    return data, model, hp, ada, gd
