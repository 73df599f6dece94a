"""Autodiff core: elementwise/reduce ops, backward contracts, broadcasting,
and the finite-difference checker itself."""

import numpy as np
import pytest

from crackscreen.tensor import (Tensor, concat, elementwise, finite_diff_check,
                                last_backward_visits, matmul, reduce, tmax,
                                tmean, tsum)


def t64(data, grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad)


class TestElementwise:
    def test_sigmoid_at_zero(self):
        assert elementwise("sigmoid", t64(0.0)).item() == 0.5

    def test_relu_negative(self):
        assert elementwise("relu", t64(-3.2)).item() == 0.0

    def test_add_vectors(self):
        out = elementwise("add", t64([1.0, 2.0]), t64([10.0, 20.0]))
        np.testing.assert_array_equal(out.data, [11.0, 22.0])

    def test_unknown_op(self):
        with pytest.raises(ValueError, match="unknown elementwise"):
            elementwise("tanh", t64(1.0))

    def test_binary_arity(self):
        with pytest.raises(ValueError):
            elementwise("add", t64(1.0))
        with pytest.raises(ValueError):
            elementwise("relu", t64(1.0), t64(2.0))

    def test_incompatible_shapes(self):
        with pytest.raises(ValueError, match="incompatible shapes"):
            t64([1.0, 2.0]) + t64([1.0, 2.0, 3.0])

    def test_log_domain(self):
        with pytest.raises(ValueError, match="non-positive"):
            elementwise("log", t64([1.0, 0.0]))

    def test_broadcasting_trailing(self):
        out = t64([[1.0, 2.0], [3.0, 4.0]]) * t64([10.0, 100.0])
        np.testing.assert_array_equal(out.data, [[10.0, 200.0], [30.0, 400.0]])

    def test_pow_fractional_negative_base(self):
        with pytest.raises(ValueError, match="fractional power"):
            t64([-1.0]) ** 1.5


class TestReduce:
    def test_mean_constant(self):
        assert reduce("mean", t64(np.full((3, 4), 7.0))).item() == 7.0

    def test_mean_vector(self):
        assert reduce("mean", t64([1.0, 2.0, 3.0, 4.0])).item() == 2.5

    def test_max_per_channel(self):
        x = t64(np.arange(1, 9, dtype=np.float64).reshape(1, 2, 2, 2))
        out = reduce("max", x, axes=(2, 3))
        np.testing.assert_array_equal(out.data, [[4.0, 8.0]])

    def test_empty_axis(self):
        with pytest.raises(ValueError, match="empty axis"):
            reduce("mean", t64(np.zeros((2, 0))), axes=(1,))

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown reduction"):
            reduce("prod", t64([1.0]))

    def test_max_tie_lowest_linear_index(self):
        x = t64(np.array([[3.0, 3.0, 1.0]]), grad=True)
        out = reduce("max", x, axes=(1,))
        out.sum().backward()
        np.testing.assert_array_equal(x.grad, [[1.0, 0.0, 0.0]])

    def test_keepdims(self):
        out = tsum(t64(np.ones((2, 3))), axes=(1,), keepdims=True)
        assert out.shape == (2, 1)


class TestBackward:
    def test_square(self):
        x = t64(3.0, grad=True)
        (x * x).backward()
        assert x.grad == 6.0

    def test_sigmoid_grad(self):
        x = t64(0.0, grad=True)
        x.sigmoid().backward()
        assert x.grad == 0.25

    def test_non_scalar_output_rejected(self):
        x = t64([1.0, 2.0], grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (x * x).backward()

    def test_grad_accumulates_until_zeroed(self):
        x = t64(3.0, grad=True)
        (x * x).backward()
        (x * x).backward()
        assert x.grad == 12.0
        x.zero_grad()
        (x * x).backward()
        assert x.grad == 6.0

    def test_each_node_visited_exactly_once(self):
        a = t64([1.0, 2.0], grad=True)
        b = t64([3.0, 4.0], grad=True)
        y = tsum(a * b + a)   # nodes: a, b, mul, add, sum
        y.backward()
        assert last_backward_visits() == 5

    def test_diamond_graph_single_visit(self):
        # a feeds two paths that rejoin; each node still visited once
        a = t64(2.0, grad=True)
        u = a * a
        y = u + u
        y.backward()
        assert last_backward_visits() == 3
        assert a.grad == 8.0

    def test_matmul_grads(self):
        a = t64(np.arange(6, dtype=np.float64).reshape(2, 3), grad=True)
        b = t64(np.arange(12, dtype=np.float64).reshape(3, 4), grad=True)
        tsum(matmul(a, b)).backward()
        np.testing.assert_allclose(a.grad, np.ones((2, 4)) @ b.data.T)
        np.testing.assert_allclose(b.grad, a.data.T @ np.ones((2, 4)))

    def test_concat_split_backward(self):
        a = t64(np.ones((2, 2)), grad=True)
        b = t64(np.ones((2, 3)), grad=True)
        w = Tensor(np.arange(10, dtype=np.float64).reshape(2, 5))
        tsum(concat([a, b], axis=1) * w).backward()
        np.testing.assert_array_equal(a.grad, w.data[:, :2])
        np.testing.assert_array_equal(b.grad, w.data[:, 2:])


class TestBroadcastingGradients:
    def test_broadcast_grad_sums_over_broadcast_axes(self):
        a = t64(np.random.default_rng(0).normal(size=(3, 1)), grad=True)
        b = t64(np.random.default_rng(1).normal(size=(3, 4)), grad=True)
        tsum(a * b).backward()
        np.testing.assert_allclose(a.grad, b.data.sum(axis=1, keepdims=True))

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_explicit_tiling(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(2, 1, 3))
        b = rng.normal(size=(2, 4, 3))
        r = rng.normal(size=(2, 4, 3))
        at = t64(a, grad=True)
        tsum(at * t64(b) * t64(r)).backward()
        # oracle: tile a explicitly, differentiate, reduce back
        tiled = t64(np.broadcast_to(a, b.shape).copy(), grad=True)
        tsum(tiled * t64(b) * t64(r)).backward()
        np.testing.assert_allclose(at.grad, tiled.grad.sum(axis=1, keepdims=True),
                                   rtol=1e-12)


class TestFiniteDiff:
    def test_sum_gradient_is_ones(self):
        err = finite_diff_check(lambda t: tsum(t), np.array([1.0, -2.0, 3.0]))
        assert err < 1e-10

    def test_quadratic(self):
        err = finite_diff_check(lambda t: tsum(t * t), np.array([1.0, 2.0]))
        assert err < 1e-8

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="not finite"):
            finite_diff_check(lambda t: (t / t - t / t).log().sum(),
                              np.array([0.0]))


PRIMITIVE_CASES = [
    ("exp", lambda t, r: tsum(t.exp() * r), 0.5),
    ("log", lambda t, r: tsum((t + 3.0).log() * r), 0.5),
    ("relu", lambda t, r: tsum(t.relu() * r), 0.4),      # inputs kept off the kink
    ("sigmoid", lambda t, r: tsum(t.sigmoid() * r), 1.0),
    ("pow", lambda t, r: tsum((t + 3.0) ** 1.7 * r), 0.5),
    ("mul", lambda t, r: tsum(t * t * r), 1.0),
    ("div", lambda t, r: tsum(r / (t + 4.0)), 0.5),
    ("sub_neg", lambda t, r: tsum((-t - 1.5) * r), 1.0),
    ("mean", lambda t, r: tsum(tmean(t, axes=(1,)) * tsum(r, axes=(1,))), 1.0),
    ("max", lambda t, r: tsum(tmax(t, axes=(0,)) * tsum(r, axes=(0,))), 1.0),
    ("reshape_transpose",
     lambda t, r: tsum(t.reshape((6, 2)).transpose((1, 0)) * r.reshape((6, 2)).transpose((1, 0))), 1.0),
]


@pytest.mark.parametrize("name,fn,spread", PRIMITIVE_CASES)
@pytest.mark.parametrize("seed", range(10))
def test_primitive_gradients_ten_seeds(name, fn, spread, seed):
    """64-bit analytic gradients match central differences at 1e-4."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 4)) * spread
    if name == "relu":
        x = x + np.sign(x) * 0.1          # keep away from the non-differentiable point
    r = Tensor(rng.normal(size=(3, 4)))
    err = finite_diff_check(lambda t: fn(t, r), x)
    assert err < 1e-4, f"{name} seed {seed}: rel err {err}"
