import numpy as np
import pytest

from fedcollab.data import load_split, limit_dataset

from idx_oracle import write_split

DESK_TRAIN = 3200
DESK_TEST = 1000


@pytest.fixture(scope="session")
def desk_mnist_dir(tmp_path_factory):
    """IDX files built from the 5000-digit MNIST sample shipped with mlxtend."""
    mlxtend_data = pytest.importorskip("mlxtend.data")
    x, y = mlxtend_data.mnist_data()
    order = np.random.default_rng(0).permutation(len(y))
    test_idx, train_idx = order[:DESK_TEST], order[DESK_TEST:]
    d = tmp_path_factory.mktemp("desk_mnist")
    write_split(d, "train", x[train_idx], y[train_idx])
    write_split(d, "t10k", x[test_idx], y[test_idx], compress=True)
    return d


@pytest.fixture(scope="session")
def desk_mnist(desk_mnist_dir):
    train = limit_dataset(load_split(desk_mnist_dir, "train"), DESK_TRAIN, seed=0)
    test = load_split(desk_mnist_dir, "test")
    return train, test


@pytest.fixture
def tiny_mnist_dir(tmp_path):
    """120 train / 40 test random digits; enough to exercise the pipeline quickly."""
    rng = np.random.default_rng(7)
    write_split(tmp_path, "train", rng.integers(0, 256, (120, 784)), rng.integers(0, 10, 120))
    write_split(tmp_path, "t10k", rng.integers(0, 256, (40, 784)), rng.integers(0, 10, 40))
    return tmp_path
