import numpy as np
import pytest

from whitebench import Dataset, LabelSet


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def one_hot_labels(rng, classes, n):
    idx = rng.integers(0, classes, size=n)
    onehot = np.zeros((classes, n))
    onehot[idx, np.arange(n)] = 1.0
    return LabelSet(onehot, encoding="one_hot")


def random_dataset(rng, d, n, split_tag="train"):
    return Dataset(rng.standard_normal((d, n)), split_tag=split_tag)
