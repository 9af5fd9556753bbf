import math

import numpy as np
import pytest

from gliopipe import tensor as T
from gliopipe.tensor import ShapeError, Tensor


class TestConv2d:
    def test_identity_kernel(self):
        x = Tensor(np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3))
        w = Tensor(np.ones((1, 1, 1, 1), dtype=np.float32))
        out = T.conv2d(x, w, stride=1, padding=0)
        np.testing.assert_array_equal(out.data, x.data)

    def test_all_ones_3x3(self):
        x = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        w = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        out = T.conv2d(x, w)
        assert out.shape == (1, 1, 1, 1)
        assert out.item() == 9.0

    def test_zero_weight(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(2, 3, 5, 5)))
        w = Tensor(np.zeros((4, 3, 3, 3), dtype=np.float32))
        out = T.conv2d(x, w, padding=1)
        assert not out.data.any()

    def test_output_shape_formula(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            h = int(rng.integers(3, 12))
            kh = int(rng.integers(1, h + 1))
            stride = int(rng.integers(1, 4))
            pad = int(rng.integers(0, 3))
            expected = (h + 2 * pad - kh) // stride + 1
            if expected < 1:
                continue
            x = Tensor(np.zeros((1, 1, h, h), dtype=np.float32))
            w = Tensor(np.zeros((1, 1, kh, kh), dtype=np.float32))
            out = T.conv2d(x, w, stride=stride, padding=pad)
            assert out.shape == (1, 1, expected, expected)

    def test_channel_mismatch_names_both_shapes(self):
        x = Tensor(np.zeros((1, 3, 4, 4), dtype=np.float32))
        w = Tensor(np.zeros((2, 4, 3, 3), dtype=np.float32))
        with pytest.raises(ShapeError, match=r"\(1, 3, 4, 4\).*\(2, 4, 3, 3\)"):
            T.conv2d(x, w)


class TestBatchNorm:
    def test_identity_on_standardized_batch(self):
        # exact zero mean, unit variance per channel
        x = np.array([[-1.0], [1.0]], dtype=np.float32).reshape(2, 1, 1, 1)
        x = np.tile(x, (1, 2, 2, 2))
        gamma = Tensor(np.ones(2, dtype=np.float32))
        beta = Tensor(np.zeros(2, dtype=np.float32))
        out = T.batch_norm2d(Tensor(x), gamma, beta,
                             np.zeros(2, np.float32), np.ones(2, np.float32),
                             training=True)
        assert np.abs(out.data - x).max() < 1e-5

    def test_zero_scale_gives_constant_beta(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(3, 2, 4, 4)))
        gamma = Tensor(np.zeros(2, dtype=np.float32))
        beta = Tensor(np.full(2, 5.0, dtype=np.float32))
        out = T.batch_norm2d(x, gamma, beta, np.zeros(2, np.float32),
                             np.ones(2, np.float32), training=True)
        np.testing.assert_allclose(out.data, 5.0, atol=1e-6)

    def test_training_mode_statistics(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(3.0, 2.0, size=(8, 3, 5, 5)))
        gamma = Tensor(np.ones(3, dtype=np.float32))
        beta = Tensor(np.zeros(3, dtype=np.float32))
        out = T.batch_norm2d(x, gamma, beta, np.zeros(3, np.float32),
                             np.ones(3, np.float32), training=True)
        mean = out.data.mean(axis=(0, 2, 3), dtype=np.float64)
        var = out.data.var(axis=(0, 2, 3), dtype=np.float64)
        assert np.abs(mean).max() < 1e-5
        assert np.abs(var - 1.0).max() < 1e-3

    def test_channel_mismatch(self):
        x = Tensor(np.zeros((2, 3, 4, 4), dtype=np.float32))
        g = Tensor(np.ones(2, dtype=np.float32))
        b = Tensor(np.zeros(2, dtype=np.float32))
        with pytest.raises(ShapeError):
            T.batch_norm2d(x, g, b, np.zeros(2, np.float32), np.ones(2, np.float32), True)

    def test_degenerate_variance(self):
        x = Tensor(np.ones((1, 3, 1, 1), dtype=np.float32))
        g = Tensor(np.ones(3, dtype=np.float32))
        b = Tensor(np.zeros(3, dtype=np.float32))
        with pytest.raises(ShapeError, match="degenerate"):
            T.batch_norm2d(x, g, b, np.zeros(3, np.float32), np.ones(3, np.float32), True)

    def test_eval_mode_uses_running_stats(self):
        x = Tensor(np.full((1, 1, 2, 2), 4.0, dtype=np.float32))
        g = Tensor(np.ones(1, dtype=np.float32))
        b = Tensor(np.zeros(1, dtype=np.float32))
        rm = np.full(1, 4.0, dtype=np.float32)
        rv = np.ones(1, dtype=np.float32)
        out = T.batch_norm2d(x, g, b, rm, rv, training=False)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)


class TestRelu:
    def test_basic(self):
        out = T.relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_positive_identity(self):
        x = np.array([0.5, 1.0, 7.0], dtype=np.float32)
        np.testing.assert_array_equal(T.relu(Tensor(x)).data, x)

    def test_gradient(self):
        x = Tensor([-1.0, 2.0], requires_grad=True)
        T.relu(x).sum().backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])


class TestAvgPool:
    def test_2x2_mean(self):
        x = Tensor(np.array([[1, 2], [3, 4]], dtype=np.float32).reshape(1, 1, 2, 2))
        out = T.avg_pool2d(x, 2, 2)
        assert out.item() == 2.5

    def test_constant_preserved(self):
        x = Tensor(np.full((1, 2, 4, 4), 3.25, dtype=np.float32))
        out = T.avg_pool2d(x, 2, 2)
        np.testing.assert_allclose(out.data, 3.25)

    def test_global_pool_of_1x1(self):
        x = np.arange(6, dtype=np.float32).reshape(2, 3, 1, 1)
        out = T.global_avg_pool(Tensor(x))
        np.testing.assert_array_equal(out.data, x.reshape(2, 3))

    def test_kernel_exceeds_spatial(self):
        x = Tensor(np.zeros((1, 1, 2, 2), dtype=np.float32))
        with pytest.raises(ShapeError):
            T.avg_pool2d(x, 3, 3)


class TestLinear:
    def test_identity_weight(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
        out = T.linear(Tensor(x), Tensor(np.eye(2, dtype=np.float32)),
                       Tensor(np.zeros(2, dtype=np.float32)))
        np.testing.assert_array_equal(out.data, x)

    def test_zero_weight_gives_bias_rows(self):
        x = Tensor(np.ones((3, 4), dtype=np.float32))
        b = np.array([1.0, -2.0], dtype=np.float32)
        out = T.linear(x, Tensor(np.zeros((4, 2), dtype=np.float32)), Tensor(b))
        for row in out.data:
            np.testing.assert_array_equal(row, b)

    def test_hand_example(self):
        out = T.linear(Tensor([[1.0, 2.0]]), Tensor(np.eye(2, dtype=np.float32)),
                       Tensor([1.0, 1.0]))
        np.testing.assert_array_equal(out.data, [[2.0, 3.0]])

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            T.linear(Tensor(np.zeros((1, 3))), Tensor(np.zeros((4, 2))),
                     Tensor(np.zeros(2)))


class TestSoftmax:
    def test_uniform(self):
        out = T.softmax(Tensor([[0.0, 0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(out.data, 0.25, atol=1e-7)

    def test_large_logits_no_overflow(self):
        out = T.softmax(Tensor([[1000.0, 0.0]]))
        assert np.all(np.isfinite(out.data))
        assert out.data[0, 0] > 1.0 - 1e-6
        assert out.data[0, 1] < 1e-6

    def test_scalar_evaluation(self):
        out = T.softmax(Tensor([[1.0, 0.0, 0.0, 0.0]]))
        expected = math.e / (math.e + 3.0)
        assert abs(out.data[0, 0] - expected) < 1e-6

    def test_rows_sum_to_one_and_positive(self):
        rng = np.random.default_rng(4)
        out = T.softmax(Tensor(rng.normal(scale=5.0, size=(20, 4))))
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-6)
        assert out.data.min() > 0

    def test_non_finite_logits(self):
        with pytest.raises(ValueError):
            T.softmax(Tensor([[np.nan, 0.0]]))


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss = T.cross_entropy_loss(Tensor(np.zeros((2, 4), dtype=np.float32)), [0, 3])
        assert abs(float(loss.data) - math.log(4.0)) < 1e-6

    def test_saturated_true_class(self):
        logits = np.zeros((1, 4), dtype=np.float32)
        logits[0, 2] = 30.0
        loss = T.cross_entropy_loss(Tensor(logits), [2])
        assert float(loss.data) < 1e-6

    def test_scalar_evaluation(self):
        loss = T.cross_entropy_loss(Tensor([[1.0, 0.0]]), [0])
        expected = -math.log(math.e / (math.e + 1.0))
        assert abs(float(loss.data) - expected) < 1e-6

    def test_out_of_range_label(self):
        with pytest.raises(ValueError):
            T.cross_entropy_loss(Tensor(np.zeros((1, 4), dtype=np.float32)), [4])


class TestDeterminism:
    def test_ops_bit_identical(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(2, 3, 8, 8)).astype(np.float32)
        w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
        a = T.conv2d(Tensor(x), Tensor(w), padding=1).data
        b = T.conv2d(Tensor(x.copy()), Tensor(w.copy()), padding=1).data
        np.testing.assert_array_equal(a, b)
