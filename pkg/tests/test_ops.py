"""Shared neural blocks: linear, instance norm, pooling, init, grad_check."""

import numpy as np
import pytest

from catpose import ops
from catpose import tensor as T
from catpose.gradcheck import GradCheckError, grad_check
from catpose.rng import Prng
from catpose.tensor import ShapeError, Tensor


class TestLinear:
    def test_identity_weight(self):
        p = ops.LinearParams(weight=Tensor(np.eye(2)), bias=Tensor(np.zeros(2)))
        np.testing.assert_allclose(ops.linear(p, Tensor([3.0, 4.0])).data, [3.0, 4.0])

    def test_summing_weight(self):
        p = ops.LinearParams(weight=Tensor([[1.0], [1.0]]), bias=Tensor([1.0]))
        np.testing.assert_allclose(ops.linear(p, Tensor([2.0, 3.0])).data, [6.0])

    def test_against_double_loop_matmul_oracle(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(7, 5))
        b = rng.normal(size=5)
        x = rng.normal(size=7)
        expected = np.zeros(5)
        for j in range(5):
            for k in range(7):
                expected[j] += x[k] * w[k, j]
            expected[j] += b[j]
        p = ops.LinearParams(weight=Tensor(w), bias=Tensor(b))
        np.testing.assert_allclose(ops.linear(p, Tensor(x)).data, expected, atol=1e-12, rtol=0)

    def test_leading_dims_preserved(self):
        rng = np.random.default_rng(1)
        p = ops.LinearParams(weight=Tensor(rng.normal(size=(3, 2))), bias=Tensor(np.zeros(2)))
        out = ops.linear(p, Tensor(rng.normal(size=(4, 5, 3))))
        assert out.shape == (4, 5, 2)

    def test_dim_mismatch_reports_shapes(self):
        p = ops.LinearParams(weight=Tensor(np.zeros((3, 2))), bias=Tensor(np.zeros(2)))
        with pytest.raises(ShapeError, match=r"\(3, 2\)"):
            ops.linear(p, Tensor(np.zeros((4, 4))))


class TestInstanceNorm:
    def test_constant_input_gives_zeros(self):
        p = ops.init_norm(3)
        out = ops.instance_norm(p, Tensor(np.full((5, 3), 2.5))).data
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_two_token_hand_case(self):
        p = ops.init_norm(1)
        out = ops.instance_norm(p, Tensor([[1.0], [3.0]])).data
        # mean 2, var 1: normalized to +-1 up to the 1e-5 epsilon
        np.testing.assert_allclose(out, [[-1.0], [1.0]], atol=1e-5)

    def test_output_channel_means_vanish(self):
        rng = np.random.default_rng(2)
        p = ops.init_norm(4)
        out = ops.instance_norm(p, Tensor(rng.normal(size=(50, 4)) * 3 + 1)).data
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-10)

    def test_inverse_affine_recovers_zero_mean(self):
        rng = np.random.default_rng(3)
        gain = rng.uniform(0.5, 2.0, 4)
        bias = rng.normal(size=4)
        p = ops.NormParams(gain=Tensor(gain), bias=Tensor(bias))
        y = ops.instance_norm(p, Tensor(rng.normal(size=(20, 4)))).data
        xn = (y - bias) / gain
        np.testing.assert_allclose(xn.mean(axis=0), 0.0, atol=1e-10)

    def test_grad(self):
        rng = np.random.default_rng(4)
        p = ops.init_norm(3)
        x = T.parameter(rng.normal(size=(6, 3)))
        mixer = Tensor(rng.normal(size=(6, 3)))
        err = grad_check(
            lambda: T.sum_(T.mul(ops.instance_norm(p, x), mixer)),
            [p.gain, p.bias, x],
            entries_per_param=4,
        )
        assert err < 1e-6


class TestAvgPool:
    def test_single_token(self):
        np.testing.assert_allclose(
            ops.avg_pool_tokens(Tensor([[1.0, 2.0, 3.0]])).data, [1.0, 2.0, 3.0]
        )

    def test_two_tokens(self):
        np.testing.assert_allclose(ops.avg_pool_tokens(Tensor([[0.0], [2.0]])).data, [1.0])

    def test_permutation_invariant(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(9, 4))
        a = ops.avg_pool_tokens(Tensor(x)).data
        b = ops.avg_pool_tokens(Tensor(x[rng.permutation(9)])).data
        np.testing.assert_allclose(a, b, atol=1e-15)

    def test_empty_errors(self):
        with pytest.raises(ShapeError):
            ops.avg_pool_tokens(Tensor(np.zeros((0, 3))))


class TestInit:
    def test_same_seed_bit_identical(self):
        a = ops.init_linear(Prng(7), 4, 5)
        b = ops.init_linear(Prng(7), 4, 5)
        assert np.array_equal(a.weight.data, b.weight.data)
        assert np.array_equal(a.bias.data, b.bias.data)

    def test_bound_for_fan_3_3(self):
        p = ops.init_linear(Prng(0), 3, 3)
        assert np.abs(p.weight.data).max() <= 1.0  # sqrt(6/6)

    def test_biases_zero(self):
        p = ops.init_linear(Prng(1), 6, 2)
        assert np.array_equal(p.bias.data, np.zeros(2))

    def test_sample_mean_near_zero(self):
        draws = ops.glorot_uniform(Prng(11), 200, 300, (100, 1000))
        assert abs(draws.mean()) < 0.01

    def test_conv_init_shapes(self):
        p = ops.init_conv3x3(Prng(2), 4, 6)
        assert p.kernel.shape == (3, 3, 4, 6)
        assert p.bias.shape == (6,)


class TestPrng:
    def test_derive_is_order_independent(self):
        a = Prng(3).derive("x", 5).uniform(size=4)
        base = Prng(3)
        base.uniform(size=100)  # consuming the parent must not matter
        b = base.derive("x", 5).uniform(size=4)
        assert np.array_equal(a, b)

    def test_distinct_keys_distinct_streams(self):
        a = Prng(3).derive(1).uniform(size=4)
        b = Prng(3).derive(2).uniform(size=4)
        assert not np.array_equal(a, b)

    def test_counter_derivation(self):
        p = Prng(9)
        a = p.derive()
        b = p.derive()
        assert not np.array_equal(a.uniform(size=3), b.uniform(size=3))


class TestGradCheck:
    def test_quadratic(self):
        w = T.parameter(np.array([3.0]), name="w")
        err = grad_check(lambda: T.sum_(T.mul(w, w)), [w])
        assert err < 1e-7

    def test_linear_softmax_cross_entropy_toy(self):
        rng = np.random.default_rng(6)
        p = ops.init_linear(Prng(8), 4, 3)
        x = Tensor(rng.normal(size=(5, 4)))
        onehot = np.eye(3)[rng.integers(0, 3, 5)]

        def loss():
            logits = ops.linear(p, x)
            probs = T.softmax(logits, axis=1)
            return T.mul(T.sum_(T.mul(Tensor(onehot), T.log(probs))), -1.0 / 5)

        err = grad_check(loss, [p.weight, p.bias], entries_per_param=6)
        assert err < 1e-6

    def test_non_finite_names_parameter(self):
        w = T.parameter(np.array([0.0]), name="w.fragile")
        # sqrt is non-finite to the left of the perturbed point
        with pytest.raises(GradCheckError, match="w.fragile"):
            grad_check(lambda: T.sum_(T.sqrt(w)), [w])
