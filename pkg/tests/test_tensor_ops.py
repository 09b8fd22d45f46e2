import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import sert.numerics as nm
from sert.errors import DimensionError, NumericError
from sert.numerics import Tensor, check_gradients


def fd_check(loss_fn, params, tol=1e-4, step=1e-5):
    errors = check_gradients(loss_fn, params, step=step)
    worst = max(errors.values())
    assert worst < tol, errors
    return worst


class TestMatmul:
    def test_identity_case(self):
        out = nm.matmul(Tensor(np.eye(2)), Tensor([[5.0], [6.0]]))
        np.testing.assert_array_equal(out.data, [[5.0], [6.0]])

    def test_hand_multiplication(self):
        out = nm.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
        np.testing.assert_array_equal(out.data, [[17.0], [39.0]])

    def test_identity_is_bitwise_noop(self, rng):
        a = rng.normal(size=(5, 5))
        out = nm.matmul(Tensor(a), Tensor(np.eye(5)))
        assert np.array_equal(out.data, a)

    def test_gradient_matches_finite_differences(self, rng):
        a = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 3)))
        fd_check(lambda: nm.reduce_sum(nm.mul(nm.matmul(a, b), w)), {"a": a, "b": b}, tol=1e-6)

    def test_batched_matches_loop(self, rng):
        a = rng.normal(size=(4, 3, 5))
        b = rng.normal(size=(5, 2))
        out = nm.matmul(Tensor(a), Tensor(b))
        for i in range(4):
            np.testing.assert_array_equal(out.data[i], a[i] @ b)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            nm.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_deterministic_repeat(self, rng):
        a, b = rng.normal(size=(6, 7)), rng.normal(size=(7, 4))
        first = nm.matmul(Tensor(a), Tensor(b)).data
        second = nm.matmul(Tensor(a), Tensor(b)).data
        assert np.array_equal(first, second)


class TestSoftmax:
    def test_uniform_input(self):
        out = nm.softmax(Tensor([0.0, 0.0, 0.0]), axis=0)
        np.testing.assert_allclose(out.data, [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_hand_exp_sum(self):
        out = nm.softmax(Tensor([0.0, np.log(3.0)]), axis=0)
        np.testing.assert_allclose(out.data, [0.25, 0.75], rtol=0, atol=1e-15)

    def test_non_finite_input_is_numeric_error(self):
        with pytest.raises(NumericError):
            Tensor([np.inf, 0.0])

    @settings(deadline=None, max_examples=40)
    @given(
        values=st.lists(st.floats(-50, 50), min_size=1, max_size=8),
        shift=st.floats(-100, 100),
    )
    def test_shift_invariance_and_normalization(self, values, shift):
        x = np.asarray(values)
        base = nm.softmax(Tensor(x), axis=0).data
        shifted = nm.softmax(Tensor(x + shift), axis=0).data
        assert abs(base.sum() - 1.0) < 1e-12
        np.testing.assert_allclose(base, shifted, rtol=0, atol=1e-12)

    def test_gradient(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 4)))
        fd_check(lambda: nm.reduce_sum(nm.mul(nm.softmax(x, axis=-1), w)), {"x": x})


class TestAveragePool:
    def test_constant_cube(self):
        out = nm.average_pool_spatial(Tensor(np.full((3, 4, 2), 7.5)))
        np.testing.assert_array_equal(out.data, np.full((1, 1, 2), 7.5))

    def test_arithmetic_mean(self):
        out = nm.average_pool_spatial(Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]))
        assert out.data.reshape(()) == 2.5

    def test_gradient_is_uniform(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(1, 1, 4)))
        fd_check(lambda: nm.reduce_sum(nm.mul(nm.average_pool_spatial(x), w)), {"x": x})

    def test_empty_extent_rejected(self):
        with pytest.raises(DimensionError):
            nm.average_pool_spatial(Tensor(np.zeros((2, 3))))


class TestLayerNorm:
    def test_constant_vector_collapses_to_zero(self):
        out = nm.layer_norm(Tensor(np.full((4,), 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, np.zeros(4))

    def test_two_point_normalization(self):
        out = nm.layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
        np.testing.assert_allclose(out.data, [1.0, -1.0], rtol=0, atol=1e-4)

    def test_gradient(self, rng):
        x = Tensor(rng.normal(size=(5, 6)), requires_grad=True)
        gamma = Tensor(rng.normal(size=(6,)), requires_grad=True)
        beta = Tensor(rng.normal(size=(6,)), requires_grad=True)
        w = Tensor(rng.normal(size=(5, 6)))
        fd_check(
            lambda: nm.reduce_sum(nm.mul(nm.layer_norm(x, gamma, beta), w)),
            {"x": x, "gamma": gamma, "beta": beta},
            tol=1e-5,
        )


class TestActivations:
    def test_gelu_known_points(self):
        out = nm.gelu(Tensor([0.0]))
        assert out.data[0] == 0.0
        out = nm.gelu(Tensor([100.0]))
        np.testing.assert_allclose(out.data, [100.0], rtol=1e-12)

    def test_gradients(self, rng):
        x = Tensor(rng.normal(size=(7,)), requires_grad=True)
        w = Tensor(rng.normal(size=(7,)))
        fd_check(lambda: nm.reduce_sum(nm.mul(nm.gelu(x), w)), {"x": x})
        fd_check(lambda: nm.reduce_sum(nm.mul(nm.sigmoid(x), w)), {"x": x})


class TestDataMovement:
    def test_reshape_transpose_roundtrip(self, rng):
        x = rng.normal(size=(3, 4, 5))
        t = nm.transpose(nm.reshape(Tensor(x), (12, 5)), (1, 0))
        back = nm.reshape(nm.transpose(t, (1, 0)), (3, 4, 5))
        assert np.array_equal(back.data, x)

    def test_concat_slice_inverse(self, rng):
        x = rng.normal(size=(4, 6))
        t = Tensor(x)
        parts = [nm.slice_axis(t, 1, 0, 2), nm.slice_axis(t, 1, 2, 6)]
        assert np.array_equal(nm.concat(parts, axis=1).data, x)

    def test_roll_inverse(self, rng):
        x = rng.normal(size=(5, 7, 2))
        rolled = nm.roll2d(Tensor(x), 2, -3)
        assert np.array_equal(nm.roll2d(rolled, -2, 3).data, x)

    def test_pad_reflect_values(self):
        x = np.arange(4.0).reshape(4, 1, 1)
        padded = nm.pad_reflect2d(Tensor(x), 3, 0)
        np.testing.assert_array_equal(padded.data[:, 0, 0], [0, 1, 2, 3, 2, 1, 0])

    def test_pad_reflect_larger_than_input(self):
        x = np.arange(2.0).reshape(2, 1, 1)
        padded = nm.pad_reflect2d(Tensor(x), 5, 0)
        np.testing.assert_array_equal(padded.data[:, 0, 0], [0, 1, 0, 1, 0, 1, 0])

    def test_movement_gradients(self, rng):
        x = Tensor(rng.normal(size=(4, 5, 2)), requires_grad=True)
        table = Tensor(rng.normal(size=(2, 9)), requires_grad=True)
        idx = np.random.default_rng(3).integers(0, 9, size=(4, 4))
        w1 = Tensor(rng.normal(size=(7, 8, 2)))
        w2 = Tensor(rng.normal(size=(2, 4, 4)))

        def loss():
            z = nm.pad_reflect2d(x, 3, 3)
            z = nm.roll2d(z, 2, -1)
            bias = nm.position_bias(table, idx)
            return nm.add(nm.reduce_sum(nm.mul(z, w1)), nm.reduce_sum(nm.mul(bias, w2)))

        fd_check(loss, {"x": x, "table": table})


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = rng.normal(size=(5, 6, 3))
        w = np.zeros((3, 3, 3, 3))
        w[1, 1] = np.eye(3)
        out = nm.conv2d(Tensor(x), Tensor(w))
        np.testing.assert_array_equal(out.data, x)

    def test_matches_direct_convolution(self, rng):
        x = rng.normal(size=(4, 5, 2))
        w = rng.normal(size=(3, 3, 2, 3))
        out = nm.conv2d(Tensor(x), Tensor(w)).data
        xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
        expected = np.zeros((4, 5, 3))
        for y in range(4):
            for xx in range(5):
                for dy in range(3):
                    for dx in range(3):
                        expected[y, xx] += xp[y + dy, xx + dx] @ w[dy, dx]
        np.testing.assert_allclose(out, expected, rtol=1e-13, atol=1e-13)

    def test_gradient(self, rng):
        x = Tensor(rng.normal(size=(4, 4, 2)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 3, 2, 2)), requires_grad=True)
        b = Tensor(rng.normal(size=(2,)), requires_grad=True)
        t = Tensor(rng.normal(size=(4, 4, 2)))
        fd_check(lambda: nm.reduce_sum(nm.mul(nm.conv2d(x, w, b), t)), {"x": x, "w": w, "b": b})


@pytest.mark.parametrize("shape", [(3,), (2, 3), (2, 3, 4)])
def test_elementwise_gradients_random_shapes(shape, rng):
    a = Tensor(rng.normal(size=shape), requires_grad=True)
    b = Tensor(rng.normal(size=shape), requires_grad=True)
    w = Tensor(rng.normal(size=shape))

    def loss():
        z = nm.add(nm.mul(a, b), nm.sub(a, b))
        z = nm.add_scalar(nm.scale(z, 0.5), 0.25)
        return nm.reduce_sum(nm.mul(z, w))

    fd_check(loss, {"a": a, "b": b})


def test_broadcast_gradients(rng):
    a = Tensor(rng.normal(size=(4, 1, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 5, 3)))
    fd_check(lambda: nm.reduce_sum(nm.mul(nm.mul(a, b), w)), {"a": a, "b": b})
    fd_check(lambda: nm.reduce_sum(nm.mul(nm.add(a, b), w)), {"a": a, "b": b})
