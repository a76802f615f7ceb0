import numpy as np
import pytest

from embedsafe.synthetic import build_corpus, make_dataset


@pytest.fixture(scope="session")
def small_train():
    return make_dataset(40, seed=0, split="train")


@pytest.fixture(scope="session")
def small_test():
    return make_dataset(20, seed=1, split="test")


@pytest.fixture(scope="session")
def micro_corpus(tmp_path_factory):
    """Tiny on-disk IDX corpus for CLI and loader tests."""
    root = tmp_path_factory.mktemp("corpus")
    return build_corpus(str(root), train_per_class=25, test_per_class=15, seed=3)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
