"""Layer contracts: shapes, worked values, gradient checks, eval purity."""

import numpy as np
import pytest

from crackscreen.layers import (BatchNorm2d, Conv2d, Dropout, Linear, MaxPool2d,
                                ResidualBlock, conv2d, dropout, global_avg_pool,
                                max_pool2d, pool)
from crackscreen.tensor import Tensor, finite_diff_check, tsum

F64 = np.float64


def proj_loss(out, seed=0):
    """Random-projection scalar loss; breaks symmetry so FD checks are tight."""
    r = Tensor(np.random.default_rng(seed).normal(size=out.shape).astype(out.dtype))
    return tsum(out * r)


class TestConv2d:
    def test_identity_1x1(self):
        x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 4, 4)))
        w = Tensor(np.eye(3).reshape(3, 3, 1, 1))
        np.testing.assert_allclose(conv2d(x, w).data, x.data, rtol=1e-12)

    def test_ones_kernel_center(self):
        out = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
        assert out.data.reshape(()) == 9.0

    def test_channel_mismatch(self):
        layer = Conv2d(3, 4, 3, rng=np.random.default_rng(0))
        with pytest.raises(ValueError, match="channels"):
            layer.forward(Tensor(np.zeros((1, 2, 8, 8), dtype=np.float32)))

    def test_kernel_larger_than_input(self):
        with pytest.raises(ValueError, match="smaller than kernel"):
            conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))

    def test_matches_naive_oracle_2to3_channels(self):
        rng = np.random.default_rng(42)
        x = rng.standard_normal((1, 2, 6, 6))
        w = rng.standard_normal((3, 2, 3, 3))
        out = conv2d(Tensor(x), Tensor(w), stride=1, padding=0).data
        ref = np.zeros_like(out)
        for o in range(3):
            for oh in range(4):
                for ow in range(4):
                    acc = 0.0
                    for c in range(2):
                        for i in range(3):
                            for j in range(3):
                                acc += x[0, c, oh + i, ow + j] * w[o, c, i, j]
                    ref[0, o, oh, ow] = acc
        np.testing.assert_allclose(out, ref, rtol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        x0 = rng.standard_normal((2, 2, 5, 5))
        w0 = rng.standard_normal((3, 2, 3, 3))
        err_x = finite_diff_check(
            lambda t: proj_loss(conv2d(t, Tensor(w0), stride=2, padding=1), seed), x0)
        err_w = finite_diff_check(
            lambda t: proj_loss(conv2d(Tensor(x0), t, stride=1, padding=1), seed), w0)
        assert err_x < 1e-4 and err_w < 1e-4

    def test_eval_purity_bitwise(self):
        layer = Conv2d(3, 4, 3, padding=1, rng=np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).standard_normal((2, 3, 6, 6)).astype(np.float32))
        a = layer.forward(x).data
        b = layer.forward(x).data
        np.testing.assert_array_equal(a, b)


class TestBatchNorm:
    def test_train_normalizes(self):
        bn = BatchNorm2d(3, dtype=F64)
        x = Tensor(np.random.default_rng(0).normal(3.0, 2.0, (4, 3, 5, 5)))
        out = bn.forward(x, training=True).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-4)

    def test_eval_affine_value(self):
        bn = BatchNorm2d(1, dtype=F64)
        bn.gamma.data = np.array([2.0])
        bn.beta.data = np.array([3.0])
        out = bn.forward(Tensor(np.ones((1, 1, 2, 2))), training=False).data
        np.testing.assert_allclose(out, 2.0 / np.sqrt(1.0 + 1e-5) + 3.0, rtol=1e-12)

    def test_momentum_update(self):
        bn = BatchNorm2d(2, dtype=F64)
        x = np.random.default_rng(0).normal(5.0, 1.0, (3, 2, 4, 4))
        m = x.mean(axis=(0, 2, 3))
        bn.forward(Tensor(x), training=True)
        np.testing.assert_allclose(bn.running_mean, 0.1 * m, rtol=1e-5)
        v = x.var(axis=(0, 2, 3))
        np.testing.assert_allclose(bn.running_var, 0.9 * 1.0 + 0.1 * v, rtol=1e-5)

    def test_degenerate_single_value(self):
        bn = BatchNorm2d(2)
        with pytest.raises(ValueError, match="degenerate"):
            bn.forward(Tensor(np.ones((1, 2, 1, 1), dtype=np.float32)), training=True)

    def test_eval_idempotent(self):
        bn = BatchNorm2d(3)
        x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 4, 4)).astype(np.float32))
        a = bn.forward(x, training=False).data
        b = bn.forward(x, training=False).data
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(bn.running_mean, np.zeros(3, dtype=np.float32))

    @pytest.mark.parametrize("training", [True, False])
    @pytest.mark.parametrize("seed", range(5))
    def test_gradients(self, training, seed):
        rng = np.random.default_rng(seed)
        x0 = rng.normal(size=(2, 3, 4, 4))
        bn = BatchNorm2d(3, dtype=F64)
        bn.gamma.data = rng.normal(1.0, 0.2, 3)
        bn.beta.data = rng.normal(0.0, 0.2, 3)
        bn.running_mean = rng.normal(0.0, 0.5, 3)
        bn.running_var = rng.uniform(0.5, 2.0, 3)
        err_x = finite_diff_check(
            lambda t: proj_loss(bn.forward(t, training), seed), x0)
        assert err_x < 1e-4

        def f_gamma(t):
            bn2 = BatchNorm2d(3, dtype=F64)
            bn2.gamma = t
            bn2.beta = bn.beta
            bn2.running_mean, bn2.running_var = bn.running_mean, bn.running_var
            return proj_loss(bn2.forward(Tensor(x0), training), seed)

        assert finite_diff_check(f_gamma, bn.gamma.data.copy()) < 1e-4


class TestPooling:
    def test_global_avg_values(self):
        x = Tensor(np.arange(1, 9, dtype=F64).reshape(1, 2, 2, 2))
        out = global_avg_pool(x)
        assert out.shape == (1, 2, 1, 1)
        np.testing.assert_array_equal(out.data.reshape(-1), [2.5, 6.5])

    def test_maxpool_2x2(self):
        out = pool("max", Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])), window=2)
        assert out.data.reshape(()) == 4.0

    def test_window_too_large(self):
        with pytest.raises(ValueError, match="window"):
            max_pool2d(Tensor(np.zeros((1, 1, 2, 2))), window=5)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="pool kind"):
            pool("avg", Tensor(np.zeros((1, 1, 2, 2))))

    def test_gap_then_linear_equals_mean_of_linear(self):
        # linearity: head(mean(x)) == mean over positions of head(x_pos)
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 3, 4, 4))
        lin = Linear(3, 5, rng=rng, dtype=F64)
        gap_first = lin.forward(
            global_avg_pool(Tensor(x)).reshape((2, 3))).data
        per_pos = np.stack([
            lin.forward(Tensor(x[:, :, i, j])).data
            for i in range(4) for j in range(4)])
        np.testing.assert_allclose(gap_first, per_pos.mean(axis=0), rtol=1e-10)

    @pytest.mark.parametrize("seed", range(10))
    def test_maxpool_gradients(self, seed):
        rng = np.random.default_rng(seed)
        x0 = rng.standard_normal((2, 2, 6, 6))
        err = finite_diff_check(
            lambda t: proj_loss(max_pool2d(t, 3, 2, 1), seed), x0)
        assert err < 1e-4


class TestLinear:
    def test_identity(self):
        lin = Linear(3, 3, bias=False, rng=np.random.default_rng(0), dtype=F64)
        lin.weight.data = np.eye(3)
        x = np.random.default_rng(1).standard_normal((4, 3))
        np.testing.assert_allclose(lin.forward(Tensor(x)).data, x, rtol=1e-12)

    def test_worked_value(self):
        lin = Linear(2, 1, rng=np.random.default_rng(0), dtype=F64)
        lin.weight.data = np.array([[1.0, 1.0]])
        lin.bias.data = np.array([0.5])
        assert lin.forward(Tensor(np.array([[2.0, 3.0]]))).data.reshape(()) == 5.5

    def test_matches_naive_loops(self):
        rng = np.random.default_rng(2)
        lin = Linear(4, 3, rng=rng, dtype=F64)
        x = rng.standard_normal((5, 4))
        out = lin.forward(Tensor(x)).data
        ref = np.zeros((5, 3))
        for b in range(5):
            for o in range(3):
                acc = lin.bias.data[o]
                for i in range(4):
                    acc += x[b, i] * lin.weight.data[o, i]
                ref[b, o] = acc
        np.testing.assert_allclose(out, ref, rtol=1e-12)

    def test_feature_mismatch(self):
        lin = Linear(4, 3, rng=np.random.default_rng(0))
        with pytest.raises(ValueError, match="features"):
            lin.forward(Tensor(np.zeros((2, 5), dtype=np.float32)))

    @pytest.mark.parametrize("seed", range(10))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        lin = Linear(4, 3, rng=rng, dtype=F64)
        x0 = rng.standard_normal((3, 4))
        err_x = finite_diff_check(lambda t: proj_loss(lin.forward(t), seed), x0)

        def f_w(t):
            lin2 = Linear(4, 3, rng=np.random.default_rng(0), dtype=F64)
            lin2.weight = t
            lin2.bias = lin.bias
            return proj_loss(lin2.forward(Tensor(x0)), seed)

        err_w = finite_diff_check(f_w, lin.weight.data.copy())
        assert err_x < 1e-4 and err_w < 1e-4


class TestDropout:
    def test_eval_identity_bitwise(self):
        x = Tensor(np.random.default_rng(0).standard_normal((8, 8)).astype(np.float32))
        assert dropout(x, 0.5, training=False) is x

    def test_p_zero_identity(self):
        x = Tensor(np.ones((4, 4), dtype=np.float32))
        assert dropout(x, 0.0, training=True, rng=np.random.default_rng(0)) is x

    def test_invalid_p(self):
        with pytest.raises(ValueError):
            Dropout(1.0)
        with pytest.raises(ValueError):
            dropout(Tensor(np.ones(3)), -0.1, True, np.random.default_rng(0))

    def test_needs_rng_in_training(self):
        with pytest.raises(ValueError, match="rng"):
            dropout(Tensor(np.ones(3)), 0.5, training=True)

    def test_survivor_statistics(self):
        rng = np.random.default_rng(123)
        x = Tensor(np.ones((1000, 1000), dtype=np.float32))
        out = dropout(x, 0.2, training=True, rng=rng).data
        survivors = np.count_nonzero(out) / out.size
        assert abs(survivors - 0.8) < 0.002
        assert abs(out.mean() - 1.0) < 0.005          # inverted scaling preserves mean
        np.testing.assert_allclose(out[out > 0], 1.0 / 0.8, rtol=1e-6)


class TestResidualBlock:
    def test_zero_branch_is_relu(self):
        block = ResidualBlock(4, 4, stride=1, rng=np.random.default_rng(0), dtype=F64)
        block.conv1.weight.data[:] = 0.0
        block.conv2.weight.data[:] = 0.0
        x = np.random.default_rng(1).standard_normal((2, 4, 5, 5))
        out = block.forward(Tensor(x), training=False).data
        np.testing.assert_allclose(out, np.maximum(x, 0.0), rtol=1e-12)

    def test_stride2_halves_spatial(self):
        block = ResidualBlock(3, 8, stride=2, rng=np.random.default_rng(0))
        out = block.forward(Tensor(np.zeros((1, 3, 16, 16), dtype=np.float32)))
        assert out.shape == (1, 8, 8, 8)
        assert block.projection is not None

    @pytest.mark.parametrize("seed", range(10))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        block = ResidualBlock(2, 2, stride=1, rng=rng, dtype=F64)
        x0 = rng.standard_normal((1, 2, 5, 5))
        err = finite_diff_check(
            lambda t: proj_loss(block.forward(t, training=True), seed), x0)
        assert err < 1e-4

    def test_param_listing(self):
        block = ResidualBlock(2, 4, stride=2, rng=np.random.default_rng(0))
        names = [n for n, _ in block.params()]
        assert "conv1.weight" in names and "proj.weight" in names
        assert "bn_proj.gamma" in names
