import os

import numpy as np
import pytest

from embedsafe.embedding import (
    EmbedderArch,
    EmbeddingNet,
    TripletTrainConfig,
    init_embedding,
    train_embedding,
    triplet_loss,
)
from embedsafe.errors import ConfigError, DimensionError, ValidationError
from embedsafe.mnist_data import Dataset

FIXTURES = np.load(os.path.join(os.path.dirname(__file__), "data", "regression_fixtures.npz"))


class TestInit:
    def test_same_seed_bit_identical(self):
        a = init_embedding(11)
        b = init_embedding(11)
        assert a.params.keys() == b.params.keys()
        for k in a.params:
            assert np.array_equal(a.params[k], b.params[k])

    def test_different_seeds_differ(self):
        a = init_embedding(0)
        b = init_embedding(1)
        assert any(not np.array_equal(a.params[k], b.params[k]) for k in a.params)

    def test_he_variance(self):
        net = init_embedding(0)
        # layers with >= 1000 weights: sample variance within 20% of 1/fan_in
        for name, fan_in in (("conv1_w", 9 * 32), ("fc0_w", 3136), ("fc1_w", 128)):
            w = net.params[name]
            if w.size < 1000:
                continue
            assert np.var(w) == pytest.approx(1.0 / fan_in, rel=0.2), name

    def test_biases_zero(self):
        net = init_embedding(3)
        for name, v in net.params.items():
            if name.endswith("_b"):
                assert np.all(v == 0.0)


class TestEmbed:
    def test_unit_norm_on_random_inputs(self, rng):
        net = init_embedding(0)
        imgs = rng.random((200, 28, 28, 1)).astype(np.float32)
        norms = np.linalg.norm(net.embed_batch(imgs), axis=1)
        assert np.all(np.abs(norms - 1.0) < 1e-6)

    def test_rejects_out_of_range(self):
        net = init_embedding(0)
        bad = np.full((28, 28, 1), 1.5, dtype=np.float32)
        with pytest.raises(ValidationError):
            net.embed(bad)

    def test_rejects_wrong_shape(self):
        net = init_embedding(0)
        with pytest.raises(DimensionError):
            net.embed(np.zeros((27, 28, 1), dtype=np.float32))

    def test_frozen_fixture_zero_image(self):
        # zero biases make the all-zero image map to the zero vector under
        # the epsilon-regularized normalization; frozen as a regression value
        net = init_embedding(0)
        got = net.embed(np.zeros((28, 28, 1), dtype=np.float32))
        assert np.allclose(got, FIXTURES["embed_seed0_zero"], atol=1e-6)

    def test_frozen_fixture_probe_image(self):
        net = init_embedding(0)
        got = net.embed(FIXTURES["distort_probe"])
        assert np.allclose(got, FIXTURES["embed_seed0_probe"], atol=1e-6)


class TestTripletLoss:
    def test_satisfied_margin(self):
        assert triplet_loss([1, 0], [1, 0], [0, 1], 0.2) == 0.0

    def test_degenerate_collapse(self):
        v = [0.6, 0.8]
        assert triplet_loss(v, v, v, 0.2) == pytest.approx(0.2)

    def test_hand_value(self):
        # d(a,p) = 4 (antipodal), d(a,n) = 2 (orthogonal)
        assert triplet_loss([1, 0], [-1, 0], [0, 1], 0.2) == pytest.approx(2.2)

    def test_bounds(self, rng):
        for _ in range(200):
            a, p, n = (x / np.linalg.norm(x) for x in rng.standard_normal((3, 10)))
            loss = triplet_loss(a, p, n, 0.2)
            d_ap = float(((a - p) ** 2).sum())
            assert loss >= 0.0
            assert loss <= d_ap + 0.2 + 1e-12

    def test_margin_validation(self):
        with pytest.raises(ConfigError):
            triplet_loss([1, 0], [1, 0], [0, 1], 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            triplet_loss([1, 0], [1, 0, 0], [0, 1], 0.2)


class TestTrainEmbedding:
    def test_zero_epochs_equals_init(self, small_train):
        cfg = TripletTrainConfig(epochs=0, seed=5)
        net, trace = train_embedding(small_train, cfg)
        ref = init_embedding(5)
        assert trace == []
        for k in ref.params:
            assert np.array_equal(net.params[k], ref.params[k])

    def test_deterministic(self, small_train):
        cfg = TripletTrainConfig(epochs=1, triplets_per_epoch=96, batch_size=32, seed=2)
        n1, t1 = train_embedding(small_train, cfg)
        n2, t2 = train_embedding(small_train, cfg)
        assert t1 == t2
        for k in n1.params:
            assert np.array_equal(n1.params[k], n2.params[k])

    def test_loss_decreases_on_small_subset(self, small_train):
        sub = Dataset(images=small_train.images[:500], labels=small_train.labels[:500])
        cfg = TripletTrainConfig(epochs=2, triplets_per_epoch=500, seed=0)
        _, trace = train_embedding(sub, cfg)
        assert len(trace) == 2
        assert trace[1] < trace[0]

    def test_single_class_rejected(self):
        imgs = np.zeros((4, 28, 28, 1), dtype=np.float32)
        ds = Dataset(images=imgs, labels=np.zeros(4, dtype=np.uint8))
        with pytest.raises(ConfigError):
            train_embedding(ds, TripletTrainConfig(epochs=1))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TripletTrainConfig(margin=-0.1)
        with pytest.raises(ConfigError):
            TripletTrainConfig(learning_rate=0.0)
        with pytest.raises(ConfigError):
            TripletTrainConfig(batch_size=0)


def test_tiny_arch_shapes():
    arch = EmbedderArch(input_hw=(8, 8), channels=(2, 2), hidden=6, embed_dim=4)
    net = EmbeddingNet.init(0, arch)
    assert net.params["fc0_w"].shape == (2 * 2 * 2, 6)
    out = net.forward(np.random.rand(3, 8, 8, 1).astype(np.float32))
    assert out.shape == (3, 4)


def test_arch_rejects_unpoolable_input():
    with pytest.raises(ConfigError):
        EmbedderArch(input_hw=(14, 14), channels=(2, 2, 2))
