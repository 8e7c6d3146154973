import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avsep import tensor as T
from avsep.errors import GeometryError
from avsep.tensor import Tensor, finite_difference_grad


def _leaf(data, **kw):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True, **kw)


class TestConstruction:
    def test_non_float_coerced_to_f32(self):
        t = Tensor([1, 2])
        assert t.dtype == np.float32

    def test_f64_preserved(self):
        t = Tensor(np.zeros(3, dtype=np.float64))
        assert t.dtype == np.float64

    def test_non_finite_leaf_rejected(self):
        with pytest.raises(ValueError):
            Tensor([1.0, math.nan])
        with pytest.raises(ValueError):
            Tensor([math.inf])

    def test_item_requires_scalar(self):
        with pytest.raises(GeometryError):
            Tensor([1.0, 2.0]).item()
        assert Tensor([[3.0]]).item() == 3.0


class TestBroadcastRules:
    def test_rank_mismatch_rejected(self):
        a = _leaf(np.ones((2, 3)))
        b = _leaf(np.ones(3))
        with pytest.raises(GeometryError):
            T.ew_add(a, b)

    def test_general_numpy_broadcast_rejected(self):
        a = _leaf(np.ones((2, 3)))
        b = _leaf(np.ones((3, 2)))
        with pytest.raises(GeometryError):
            T.ew_mul(a, b)

    def test_axis_one_broadcast_allowed(self):
        a = _leaf(np.arange(6.0).reshape(2, 3))
        b = _leaf(np.array([[10.0], [20.0]]))
        y = T.ew_add(a, b)
        np.testing.assert_array_equal(y.data, a.data + b.data)

    def test_scalar_broadcasts_freely(self):
        a = _leaf(np.ones((2, 3)))
        s = _leaf(np.array(2.0))
        assert T.ew_mul(a, s).shape == (2, 3)

    def test_broadcast_gradient_sums(self):
        a = _leaf(np.arange(6.0).reshape(2, 3))
        b = _leaf(np.array([[1.0], [2.0]]))
        T.sum_all(T.ew_mul(a, b)).backward()
        np.testing.assert_allclose(b.grad, a.data.sum(axis=1, keepdims=True))


class TestBackward:
    def test_requires_scalar_root(self):
        a = _leaf(np.ones(3))
        with pytest.raises(GeometryError):
            T.ew_add(a, a).backward()

    def test_fanout_accumulates(self):
        # y = x*x + x  =>  dy/dx = 2x + 1
        x = _leaf([1.5, -2.0, 0.25])
        T.sum_all(T.ew_add(T.ew_mul(x, x), x)).backward()
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)

    def test_shared_subgraph_visited_once(self):
        x = _leaf([2.0])
        h = T.ew_mul(x, x)
        y = T.ew_add(h, h)  # y = 2x^2, dy/dx = 4x
        T.sum_all(y).backward()
        np.testing.assert_allclose(x.grad, [8.0])

    def test_no_grad_without_requires(self):
        a = Tensor(np.ones(3, dtype=np.float64))
        b = _leaf(np.ones(3))
        T.sum_all(T.ew_mul(a, b)).backward()
        assert a.grad is None
        np.testing.assert_allclose(b.grad, np.ones(3))


class TestOpGradients:
    @pytest.mark.parametrize("op", [T.ew_add, T.ew_sub, T.ew_mul, T.ew_div])
    def test_binary_ops_match_finite_difference(self, op, rng):
        a = _leaf(rng.uniform(0.5, 2.0, (3, 4)))
        b = _leaf(rng.uniform(0.5, 2.0, (3, 4)))
        w = rng.uniform(-1, 1, (3, 4))
        T.sum_all(T.ew_mul(op(a, b), Tensor(w, dtype=np.float64))).backward()

        def f_a(x):
            return float((op(Tensor(x), Tensor(b.data)).data * w).sum())

        def f_b(x):
            return float((op(Tensor(a.data), Tensor(x)).data * w).sum())

        np.testing.assert_allclose(a.grad, finite_difference_grad(f_a, a.data), rtol=1e-6)
        np.testing.assert_allclose(b.grad, finite_difference_grad(f_b, b.data), rtol=1e-6)

    @pytest.mark.parametrize("op,dom", [
        (T.sigmoid, (-3, 3)), (T.log, (0.5, 4.0)),
    ])
    def test_unary_ops_match_finite_difference(self, op, dom, rng):
        x = _leaf(rng.uniform(*dom, (2, 5)))
        w = rng.uniform(-1, 1, (2, 5))
        T.sum_all(T.ew_mul(op(x), Tensor(w, dtype=np.float64))).backward()

        def f(v):
            return float((op(Tensor(v)).data * w).sum())

        np.testing.assert_allclose(x.grad, finite_difference_grad(f, x.data),
                                   rtol=1e-6, atol=1e-9)

    def test_relu_subgradient_away_from_zero(self, rng):
        x = _leaf([-1.0, -0.3, 0.4, 2.0])
        T.sum_all(T.relu(x)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0, 1.0])

    def test_scale_grad(self):
        x = _leaf([1.0, 2.0])
        T.sum_all(T.scale(x, -2.5)).backward()
        np.testing.assert_allclose(x.grad, [-2.5, -2.5])


class TestNumerics:
    def test_sigmoid_stable_at_extremes(self):
        y = T.sigmoid(Tensor([-1000.0, 0.0, 1000.0]))
        assert np.all(np.isfinite(y.data))
        np.testing.assert_allclose(y.data, [0.0, 0.5, 1.0], atol=1e-7)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=32))
    @settings(max_examples=50, deadline=None)
    def test_sum_all_matches_numpy(self, values):
        arr = np.array(values, dtype=np.float64)
        assert T.sum_all(Tensor(arr)).item() == pytest.approx(arr.sum(), rel=1e-12, abs=1e-9)


class TestFiniteDifferenceOracle:
    def test_quadratic(self):
        x = np.array([1.0, -2.0, 3.0])
        g = finite_difference_grad(lambda v: float((v ** 2).sum()), x)
        np.testing.assert_allclose(g, 2 * x, atol=1e-8)

    def test_rejects_bad_eps(self):
        with pytest.raises(ValueError):
            finite_difference_grad(lambda v: 0.0, np.zeros(2), eps=0.0)
