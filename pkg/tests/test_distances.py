import numpy as np
import pytest

from embedsafe.distances import (
    ImageDistanceKind,
    combined_distance,
    dssim_distance,
    embedding_distance,
    image_distance,
    l1_distance,
    l2_distance,
    sobel_distance,
    sobel_mask,
)
from embedsafe.errors import DimensionError, ParameterError

KX = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
KY = [[1, 2, 1], [0, 0, 0], [-1, -2, -1]]


def sobel_mask_oracle(img):
    """Brute-force loop cross-correlation with edge-replicate padding."""
    h, w = img.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            gx = gy = 0.0
            for u in range(3):
                for v in range(3):
                    ii = min(max(i + u - 1, 0), h - 1)
                    jj = min(max(j + v - 1, 0), w - 1)
                    gx += KX[u][v] * img[ii, jj]
                    gy += KY[u][v] * img[ii, jj]
            out[i, j] = np.hypot(gx, gy)
    return out


def vertical_step():
    img = np.zeros((28, 28))
    img[:, 14:] = 1.0
    return img


class TestL1:
    def test_identity(self, rng):
        x = rng.random((28, 28))
        assert l1_distance(x, x) == 0.0

    def test_constant_half(self):
        assert l1_distance(np.zeros((28, 28)), np.full((28, 28), 0.5)) == pytest.approx(0.5)

    def test_single_pixel(self):
        x = np.zeros((28, 28))
        x[3, 7] = 1.0
        assert l1_distance(x, np.zeros((28, 28))) == pytest.approx(1 / 784)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            l1_distance(np.zeros((28, 28)), np.zeros((27, 28)))


class TestL2:
    def test_identity(self, rng):
        x = rng.random((28, 28))
        assert l2_distance(x, x) == 0.0

    def test_zeros_vs_ones(self):
        assert l2_distance(np.zeros((28, 28)), np.ones((28, 28))) == pytest.approx(1.0)

    def test_single_pixel(self):
        x = np.zeros((28, 28))
        x[0, 0] = 1.0
        assert l2_distance(x, np.zeros((28, 28))) == pytest.approx(1 / 784)


class TestDssim:
    def test_identity(self, rng):
        x = rng.random((28, 28))
        assert abs(dssim_distance(x, x)) < 1e-12

    def test_constant_zero_vs_one(self):
        # zero variances: SSIM = kappa1 / (1 + kappa1), hand-evaluated
        got = dssim_distance(np.zeros((28, 28)), np.ones((28, 28)))
        expect = (1 - 1e-4 / 1.0001) / 2
        assert got == pytest.approx(expect, abs=1e-12)

    def test_equal_constants(self):
        x = np.full((28, 28), 0.37)
        assert abs(dssim_distance(x, x.copy())) < 1e-12

    def test_range_and_symmetry(self, rng):
        for _ in range(200):
            a, b = rng.random((5, 5)), rng.random((5, 5))
            d = dssim_distance(a, b)
            assert 0.0 <= d <= 1.0
            assert d == pytest.approx(dssim_distance(b, a), abs=1e-12)

    def test_kappa_validation(self):
        with pytest.raises(ParameterError):
            dssim_distance(np.zeros((3, 3)), np.zeros((3, 3)), kappa1=0.0)


class TestSobelMask:
    def test_constant_is_zero(self):
        assert np.all(sobel_mask(np.full((28, 28), 0.7)) == 0.0)

    def test_vertical_step_values(self):
        m = sobel_mask(vertical_step())
        # replicate padding keeps the edge rows identical to interior rows
        assert np.all(m[:, 13] == 4.0)
        assert np.all(m[:, 14] == 4.0)
        assert np.all(m[:, :13] == 0.0)
        assert np.all(m[:, 15:] == 0.0)

    def test_horizontal_step_via_transpose(self):
        v = sobel_mask(vertical_step())
        hmask = sobel_mask(vertical_step().T)
        assert np.allclose(hmask, v.T)

    def test_matches_bruteforce_oracle(self, rng):
        for _ in range(20):
            img = rng.random((8, 8))
            assert np.allclose(sobel_mask(img), sobel_mask_oracle(img), atol=1e-6)


class TestSobelDistance:
    def test_identity(self, rng):
        x = rng.random((28, 28))
        assert sobel_distance(x, x) == 0.0

    def test_constant_truth_blind_spot(self, rng):
        # documented: a zero mask scores every prediction as 0
        truth = np.full((28, 28), 0.3)
        assert sobel_distance(rng.random((28, 28)), truth) == 0.0

    def test_step_pair_hand_value(self):
        truth = vertical_step()
        pred = truth.copy()
        pred[:, 13] = 1.0
        pred[:, 14] = 0.0
        mask = sobel_mask_oracle(truth)
        expect = float((mask * np.abs(pred - truth)).sum()) / 784
        assert sobel_distance(pred, truth) == pytest.approx(expect, rel=1e-9)
        assert expect == pytest.approx(4.0 * 56 / 784)

    def test_asymmetry(self, rng):
        a = rng.random((8, 8))
        b = rng.random((8, 8))
        assert sobel_distance(a, b) != pytest.approx(sobel_distance(b, a))


class TestCombined:
    def test_omega_one_is_l1(self, rng):
        a, b = rng.random((8, 8)), rng.random((8, 8))
        assert combined_distance(a, b, omega=1.0) == pytest.approx(l1_distance(a, b))

    def test_omega_zero_is_sobel(self, rng):
        a, b = rng.random((8, 8)), rng.random((8, 8))
        assert combined_distance(a, b, omega=0.0) == pytest.approx(sobel_distance(a, b))

    def test_omega_half_mixes(self, rng):
        a, b = rng.random((8, 8)), rng.random((8, 8))
        expect = 0.5 * l1_distance(a, b) + 0.5 * sobel_distance(a, b)
        assert combined_distance(a, b, 0.5) == pytest.approx(expect)

    def test_omega_out_of_range(self, rng):
        a = rng.random((8, 8))
        with pytest.raises(ParameterError):
            combined_distance(a, a, omega=1.5)
        with pytest.raises(ParameterError):
            ImageDistanceKind("combined", omega=-0.1)


class TestEmbeddingDistance:
    def test_identity(self):
        u = np.array([0.6, 0.8])
        assert embedding_distance(u, u) == 0.0

    def test_antipodal(self):
        assert embedding_distance([1.0, 0.0], [-1.0, 0.0]) == pytest.approx(4.0)

    def test_orthogonal(self):
        assert embedding_distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(2.0)

    def test_inner_product_identity(self, rng):
        for _ in range(100):
            u = rng.standard_normal(10)
            v = rng.standard_normal(10)
            u /= np.linalg.norm(u)
            v /= np.linalg.norm(v)
            assert embedding_distance(u, v) == pytest.approx(2 - 2 * float(u @ v), abs=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            embedding_distance([1.0, 0.0], [1.0, 0.0, 0.0])


def test_nonnegativity_and_identity_all_kinds(rng):
    kinds = [ImageDistanceKind(k) for k in ("l1", "l2", "dssim", "sobel", "combined")]
    for _ in range(100):
        a, b = rng.random((6, 6)), rng.random((6, 6))
        for kind in kinds:
            assert image_distance(kind, a, b) >= 0.0
            assert image_distance(kind, a, a.copy()) <= 1e-12


def test_symmetry_where_claimed(rng):
    for _ in range(100):
        a, b = rng.random((6, 6)), rng.random((6, 6))
        for k in ("l1", "l2", "dssim"):
            kind = ImageDistanceKind(k)
            assert image_distance(kind, a, b) == pytest.approx(
                image_distance(kind, b, a), abs=1e-12
            )


def test_unknown_kind_rejected():
    with pytest.raises(ParameterError):
        ImageDistanceKind("manhattan")
