import numpy as np
import pandas as pd
import pytest

from twostep import Dataset


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run the full-size Monte Carlo coverage study')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_dataset(rng, n, k, intercept=True, d_y=1):
    z = rng.normal(size=(n, k))
    if intercept:
        z[:, 0] = 1.0
    r = z @ rng.normal(size=k) + rng.normal(size=n)
    y = rng.normal(size=(n, d_y))
    return Dataset(y=y, r=r, z=z)


@pytest.fixture
def make_dataset():
    return random_dataset


@pytest.fixture
def design(rng):
    return random_dataset(rng, 50, 8)


def spread_sample(n, n_instruments, seed):
    """Selection on a uniform index with propensities spread over (0.05, 0.95).

    Returns the sample (intercept first) and the true propensities."""
    gen = np.random.default_rng(seed)
    instruments = gen.uniform(size=(n, n_instruments))
    p = 0.05 + 0.9 * instruments[:, :2].mean(axis=1)
    v = gen.uniform(size=n)
    t = (p >= v).astype(float)
    y1 = 0.5 + gen.uniform(-0.5, 1.5 - 2 * v)
    y0 = gen.uniform(-1.0, 1.0, size=n)
    y = t * y1 + (1 - t) * y0
    z = np.column_stack([np.ones(n), instruments])
    return Dataset(y=y, r=t, z=z), p


@pytest.fixture
def mte_sample():
    """400 rows, 10 instruments."""
    return spread_sample(400, 9, 7)


@pytest.fixture
def toy_csv(tmp_path):
    data, _ = spread_sample(120, 5, 11)
    frame = pd.DataFrame(data.z[:, 1:], columns=[f'z{j}' for j in range(1, 6)])
    frame.insert(0, 'T', data.r.astype(int))
    frame.insert(0, 'y', data.y[:, 0])
    path = tmp_path / 'toy.csv'
    frame.to_csv(path, index=False)
    return path
