import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ckgopt.design import BoxDomain  # noqa: E402
from ckgopt.gp import GpModel, KernelParams  # noqa: E402

# filled by test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES = []


def smooth_fn(X, rng_state):
    w, b = rng_state
    return np.sin(np.asarray(X) @ w + b).sum(axis=-1)


def random_model(rng, n=None, d=None, noise=None, domain=None, ls=(0.2, 0.6), center=False):
    """A GP on the unit cube (or ``domain``) with smooth random data.

    ``center`` shifts the data to zero mean, which keeps a constraint model
    from being everywhere (in)feasible.
    """
    d = d or int(rng.integers(1, 4))
    n = int(rng.integers(1, 31)) if n is None else n
    domain = domain or BoxDomain.unit(d)
    params = KernelParams(rng.uniform(*ls, size=d), float(rng.uniform(0.5, 2.0)),
                          float(rng.uniform(1e-4, 0.1)) if noise is None else noise)
    X = domain.from_unit(rng.random((n, d)))
    state = (rng.normal(0, 3, size=(d, 2)), rng.uniform(0, 6, size=2))
    y = smooth_fn(domain.to_unit(X), state)
    if center and n:
        y = y - y.mean()
    return GpModel(params, X, y, domain, prior_mean=float(y.mean()) if n else 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
