import numpy as np
import pytest

import sert.numerics as nm
from sert.enhancement import (
    SEWeights,
    memory_read,
    merge_cubes,
    partition_cubes,
    project_rank,
    rescale,
    se_forward,
    squeeze,
)
from sert.errors import ConfigError
from sert.numerics import Tensor, check_gradients


def se_weights(rng, c=4, k=2, entries=3, scale=0.5):
    return SEWeights(
        Tensor(rng.normal(size=(c, k)) * scale, requires_grad=True),
        Tensor(rng.normal(size=(c, k)) * scale, requires_grad=True),
        Tensor(rng.normal(size=(k, entries)) * scale, requires_grad=True),
    )


class TestPartition:
    def test_grid_count(self, rng):
        patches, grid = partition_cubes(Tensor(rng.normal(size=(8, 8, 3))), 4, 4)
        assert patches.shape == (4, 4, 4, 3)
        assert (grid.rows, grid.cols) == (2, 2)

    def test_shifted_roundtrip_bitwise(self, rng):
        z = rng.normal(size=(8, 12, 3))
        patches, grid = partition_cubes(Tensor(z), 4, 4, shifted=True)
        assert np.array_equal(merge_cubes(patches, grid).data, z)

    def test_shift_mixes_patch_borders(self):
        # two-tone map: constant inside each unshifted patch
        z = np.zeros((8, 8, 1))
        z[:4, :4] = 1.0
        z[4:, 4:] = 2.0
        unshifted, _ = partition_cubes(Tensor(z), 4, 4, shifted=False)
        shifted, _ = partition_cubes(Tensor(z), 4, 4, shifted=True)
        assert np.ptp(unshifted.data, axis=(1, 2, 3)).max() == 0.0
        assert np.ptp(shifted.data, axis=(1, 2, 3)).max() > 0.0

    def test_patch_larger_than_map_rejected(self, rng):
        with pytest.raises(ConfigError):
            partition_cubes(Tensor(rng.normal(size=(4, 4, 2))), 8, 8)


class TestSqueeze:
    def test_constant_patch(self):
        patches = Tensor(np.full((2, 3, 3, 5), 4.25))
        np.testing.assert_array_equal(squeeze(patches).data, np.full((2, 5), 4.25))

    def test_mean_value(self):
        patch = np.zeros((1, 2, 2, 1))
        patch[0, :, :, 0] = [[0.0, 1.0], [2.0, 3.0]]
        assert squeeze(Tensor(patch)).data[0, 0] == 1.5

    def test_pixel_permutation_invariance(self, rng):
        patch = rng.normal(size=(1, 4, 4, 3))
        flat = patch.reshape(1, 16, 3)
        perm = np.random.default_rng(0).permutation(16)
        shuffled = flat[:, perm].reshape(1, 4, 4, 3)
        np.testing.assert_allclose(
            squeeze(Tensor(patch)).data, squeeze(Tensor(shuffled)).data, rtol=0, atol=1e-15
        )


class TestProjection:
    def test_selector_matrix(self, rng):
        zc = rng.normal(size=(2, 5))
        w = np.zeros((5, 2))
        w[0, 0] = w[1, 1] = 1.0
        out = project_rank(Tensor(zc), Tensor(w))
        np.testing.assert_array_equal(out.data, zc[:, :2])

    def test_zero_input(self):
        out = project_rank(Tensor(np.zeros((1, 4))), Tensor(np.ones((4, 2))))
        np.testing.assert_array_equal(out.data, np.zeros((1, 2)))

    def test_gradient_tight(self, rng):
        zc = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        t = Tensor(rng.normal(size=(3, 2)))
        errors = check_gradients(lambda: nm.reduce_sum(nm.mul(project_rank(zc, w), t)), {"zc": zc, "w": w})
        assert max(errors.values()) < 1e-6, errors


class TestMemoryRead:
    def test_degenerate_bank_returns_column(self, rng):
        m = np.tile(np.array([[0.7], [-0.2]]), (1, 4))  # all columns equal
        _, zl = memory_read(Tensor(rng.normal(size=(3, 2))), Tensor(m))
        np.testing.assert_allclose(zl.data, np.tile([0.7, -0.2], (3, 1)), rtol=0, atol=1e-12)

    def test_sharpened_lookup_selects_column(self):
        m = np.eye(2)  # orthogonal columns
        zk = Tensor(np.array([[100.0, 0.0]]))
        coeff, zl = memory_read(zk, Tensor(m))
        assert coeff.data[0, 0] > 0.99
        np.testing.assert_allclose(zl.data[0], m[:, 0], rtol=0, atol=0.01)

    def test_hand_softmax_average(self):
        coeff, zl = memory_read(Tensor(np.array([[0.0]])), Tensor(np.array([[1.0, 3.0]])))
        np.testing.assert_allclose(coeff.data, [[0.5, 0.5]], rtol=0, atol=1e-15)
        np.testing.assert_allclose(zl.data, [[2.0]], rtol=0, atol=1e-15)

    def test_coefficients_sum_to_one(self, rng):
        coeff, _ = memory_read(Tensor(rng.normal(size=(6, 3))), Tensor(rng.normal(size=(3, 7))))
        np.testing.assert_allclose(coeff.data.sum(axis=1), np.ones(6), rtol=0, atol=1e-12)

    def test_convex_combination_bounds(self, rng):
        m = rng.normal(size=(4, 6))
        _, zl = memory_read(Tensor(rng.normal(size=(5, 4)) * 3), Tensor(m))
        lo, hi = m.min(axis=1), m.max(axis=1)
        assert (zl.data >= lo - 1e-12).all() and (zl.data <= hi + 1e-12).all()


class TestRescale:
    def test_unit_gate_is_identity_bitwise(self, rng):
        patches = rng.normal(size=(2, 3, 3, 4))
        w_gate = np.zeros((4, 1))
        w_gate[:, 0] = 1.0
        out = rescale(Tensor(patches), Tensor(np.ones((2, 1))), Tensor(w_gate))
        assert np.array_equal(out.data, patches)

    def test_zero_gate(self, rng):
        patches = rng.normal(size=(2, 2, 2, 3))
        out = rescale(Tensor(patches), Tensor(np.zeros((2, 2))), Tensor(rng.normal(size=(3, 2))))
        np.testing.assert_array_equal(out.data, np.zeros_like(patches))

    def test_channelwise_product_by_hand(self):
        patches = Tensor(np.full((1, 2, 2, 3), 2.0))
        w_gate = Tensor(np.array([[0.5], [1.0], [2.0]]))
        out = rescale(patches, Tensor(np.array([[1.0]])), w_gate)
        np.testing.assert_array_equal(out.data[0, 0, 0], [1.0, 2.0, 4.0])


class TestSeForward:
    def test_composed_identity(self, rng):
        # every bank column is e_1 and the gate expansion maps e_1 to all-ones
        k, c = 2, 4
        memory = np.zeros((k, 5))
        memory[0, :] = 1.0
        w_gate = np.zeros((c, k))
        w_gate[:, 0] = 1.0
        weights = SEWeights(Tensor(rng.normal(size=(c, k))), Tensor(w_gate), Tensor(memory))
        z = rng.normal(size=(4, 4, c))
        out = se_forward(Tensor(z), 2, 2, weights)
        np.testing.assert_allclose(out.data, z, rtol=0, atol=1e-12)

    def test_shape_contract_with_padding(self, rng):
        weights = se_weights(rng)
        out = se_forward(Tensor(rng.normal(size=(5, 7, 4))), 4, 4, weights, shifted=True)
        assert out.shape == (5, 7, 4)

    def test_patch_permutation_leaves_zl_unchanged(self, rng):
        weights = se_weights(rng)
        z = rng.normal(size=(4, 4, 4))
        collector = []
        se_forward(Tensor(z), 4, 4, weights, collector=collector)
        shuffled = z.reshape(16, 4)[np.random.default_rng(1).permutation(16)].reshape(4, 4, 4)
        collector2 = []
        se_forward(Tensor(shuffled), 4, 4, weights, collector=collector2)
        np.testing.assert_allclose(collector[0][1], collector2[0][1], rtol=0, atol=1e-12)

    def test_gate_is_spatially_uniform(self, rng):
        weights = se_weights(rng)
        z = np.abs(rng.normal(size=(4, 4, 4))) + 0.5
        out = se_forward(Tensor(z), 2, 2, weights).data
        ratio = out / z
        patches = ratio.reshape(2, 2, 2, 2, 4).transpose(0, 2, 1, 3, 4).reshape(4, 4, 4)
        spread = np.ptp(patches, axis=1)
        assert spread.max() < 1e-12

    def test_memory_toggle_gates_with_projection(self, rng):
        weights = se_weights(rng)
        z = Tensor(rng.normal(size=(4, 4, 4)))
        with_mu = se_forward(z, 2, 2, weights, use_memory=True)
        without_mu = se_forward(z, 2, 2, weights, use_memory=False)
        assert not np.allclose(with_mu.data, without_mu.data)

    def test_parameter_gradients(self, rng):
        weights = se_weights(rng)
        z = Tensor(rng.normal(size=(4, 4, 4)))
        target = Tensor(rng.normal(size=(4, 4, 4)))
        params = {"w_down": weights.w_down, "w_gate": weights.w_gate, "memory": weights.memory}
        errors = check_gradients(
            lambda: nm.mse(se_forward(z, 2, 2, weights, shifted=True), target), params
        )
        assert max(errors.values()) < 1e-4, errors

    def test_sigmoid_gate_variant(self, rng):
        weights = SEWeights(
            Tensor(rng.normal(size=(4, 2))), Tensor(rng.normal(size=(4, 2))),
            Tensor(rng.normal(size=(2, 3))), gate="sigmoid",
        )
        z = np.abs(rng.normal(size=(4, 4, 4))) + 0.5
        out = se_forward(Tensor(z), 2, 2, weights).data
        ratio = out / z
        assert (ratio > 0).all() and (ratio < 1).all()

    def test_golden_forward(self, golden):
        rng = np.random.default_rng(77)
        weights = se_weights(rng)
        z = Tensor(np.random.default_rng(8).normal(size=(8, 8, 4)))
        out = se_forward(z, 4, 4, weights, shifted=True)
        golden("se_forward_8x8x4", out.data)


def test_low_rank_constraint_enforced(rng):
    with pytest.raises(ConfigError):
        SEWeights(Tensor(rng.normal(size=(4, 4))), Tensor(rng.normal(size=(4, 4))), None)
