import numpy as np
import pytest

from core import Cascade, CascadeSet, CascadeTruth, MultilayerNetwork


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale trend checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def random_instance(rng: np.random.Generator, max_nodes: int = 10, max_cascades: int = 10, max_layers: int = 3):
    """Random cascades, dense K x N x N rates (zero diagonal) and memberships"""
    n = int(rng.integers(2, max_nodes + 1))
    c = int(rng.integers(1, max_cascades + 1))
    k = int(rng.integers(1, max_layers + 1))
    horizon = float(rng.uniform(2.0, 10.0))

    cascades = []
    for cid in range(c):
        size = int(rng.integers(1, n + 1))
        nodes = rng.choice(n, size=size, replace=False)
        times = np.sort(rng.uniform(0.0, horizon, size=size))
        times[0] = 0.0
        if size > 2 and rng.random() < 0.3:
            times[1] = 0.0  # two seeds
        cascades.append(Cascade(id=cid, horizon=horizon, nodes=nodes, times=times))

    alpha = rng.uniform(0.01, 1.0, size=(k, n, n))
    for layer in alpha:
        np.fill_diagonal(layer, 0.0)
    pi = rng.dirichlet(np.ones(k), size=c)
    return CascadeSet(tuple(cascades)), alpha, pi


def all_pairs(n: int) -> np.ndarray:
    return np.array([(i, j) for i in range(n) for j in range(n) if i != j], dtype=np.int64).reshape(-1, 2)


@pytest.fixture
def two_layer_network():
    return MultilayerNetwork.from_edges(4, [
        [(0, 1, 0.5), (1, 2, 0.25)],
        [(0, 1, 0.75), (2, 3, 1.0)],
    ])


@pytest.fixture
def labelled_cascades():
    truth0 = CascadeTruth(main_layer=0, eps=0.0, pi=(1.0, 0.0))
    truth1 = CascadeTruth(main_layer=1, eps=0.0, pi=(0.0, 1.0))
    return CascadeSet((
        Cascade(id=0, horizon=5.0, nodes=np.array([0, 1, 2]), times=np.array([0.0, 0.5, 1.5]), truth=truth0),
        Cascade(id=1, horizon=5.0, nodes=np.array([2, 3]), times=np.array([0.0, 2.0]), truth=truth1),
        Cascade(id=2, horizon=5.0, nodes=np.array([0, 1]), times=np.array([0.0, 1.0]), truth=truth1),
    ))
