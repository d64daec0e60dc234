import json
from importlib import resources

import numpy as np
import pytest

from supnoninf import _accel


def load_data(name):
    return json.loads(resources.files("supnoninf.data").joinpath(name).read_text())


@pytest.fixture(params=["numpy"] + (["numba"] if _accel.HAVE_NUMBA else []))
def each_backend(request):
    previous = _accel.set_backend(request.param)
    yield request.param
    _accel.set_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


def random_correlation(rng, m):
    a = rng.normal(size=(m, m + 2))
    s = a @ a.T
    d = np.sqrt(np.diag(s))
    return s / np.outer(d, d)


def mc_oracle(lower, upper, R, d, draws, seed, block=1 << 20):
    """Plain Monte Carlo estimate of P(lower < T <= upper) and its standard error."""
    gen = np.random.default_rng(seed)
    L = np.linalg.cholesky(np.asarray(R) + 1e-13 * np.eye(len(lower)))
    hits = 0
    left = draws
    while left:
        n = min(block, left)
        z = gen.standard_normal((n, len(lower))) @ L.T
        if np.isfinite(d):
            z /= np.sqrt(gen.chisquare(d, size=n) / d)[:, None]
        hits += int(np.count_nonzero(((z > lower) & (z <= upper)).all(axis=1)))
        left -= n
    p = hits / draws
    return p, np.sqrt(max(p * (1 - p), 1.0 / draws) / draws)
