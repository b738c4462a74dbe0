"""Autodiff core: every primitive's backward against central differences."""

import numpy as np
import pytest

from catpose import tensor as T
from catpose.tensor import ShapeError, Tensor


def numeric_grad(f, x, h=1e-6):
    """Central-difference gradient of scalar f w.r.t. ndarray x."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        hi = f(x)
        x[i] = orig - h
        lo = f(x)
        x[i] = orig
        g[i] = (hi - lo) / (2 * h)
        it.iternext()
    return g


def check_op(build, x0, rtol=1e-6, atol=1e-9):
    """Compare reverse-mode gradient of sum(op(x)) against numeric one."""
    leaf = T.parameter(x0.copy())
    out = build(leaf)
    T.sum_(out).backward()

    def scalar(arr):
        with T.no_grad():
            return float(T.sum_(build(Tensor(arr))).data)

    expected = numeric_grad(scalar, x0.copy())
    np.testing.assert_allclose(leaf.grad, expected, rtol=rtol, atol=atol)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


class TestArithmetic:
    def test_add_sub_mul_div_grads(self, rng):
        a0 = rng.normal(size=(3, 4))
        b0 = rng.normal(size=(3, 4)) + 3.0
        check_op(lambda a: T.add(a, b0), a0)
        check_op(lambda a: T.sub(a, b0), a0)
        check_op(lambda a: T.mul(a, b0), a0)
        check_op(lambda a: T.div(a, b0), a0)
        check_op(lambda b: T.div(Tensor(a0), b), b0)

    def test_broadcast_backward_sums_over_expanded_axes(self, rng):
        bias = T.parameter(rng.normal(size=(4,)))
        x = Tensor(rng.normal(size=(5, 4)))
        T.sum_(T.add(x, bias)).backward()
        np.testing.assert_allclose(bias.grad, np.full(4, 5.0))

    def test_matmul_grad(self, rng):
        a0 = rng.normal(size=(3, 5))
        b0 = rng.normal(size=(5, 2))
        check_op(lambda a: T.matmul(a, b0), a0)
        check_op(lambda b: T.matmul(Tensor(a0), b), b0)

    def test_matmul_shape_error_reports_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(3, 5\).*\(4, 2\)"):
            T.matmul(Tensor(np.zeros((3, 5))), Tensor(np.zeros((4, 2))))

    def test_elementwise_functions(self, rng):
        x0 = rng.uniform(0.5, 2.0, size=(4, 3))
        check_op(T.exp, x0)
        check_op(T.log, x0)
        check_op(T.sqrt, x0)


class TestShapeOps:
    def test_reshape_transpose_concat_narrow(self, rng):
        x0 = rng.normal(size=(2, 3, 4))
        check_op(lambda x: T.reshape(x, (6, 4)), x0)
        check_op(lambda x: T.transpose(x, (2, 0, 1)), x0)
        check_op(lambda x: T.narrow(x, 1, 1, 2), x0)
        y0 = rng.normal(size=(2, 3, 4))
        check_op(lambda x: T.concat([x, Tensor(y0)], axis=2), x0)

    def test_gather_rows_accumulates_duplicates(self, rng):
        x = T.parameter(rng.normal(size=(4, 3)))
        out = T.gather_rows(x, np.array([0, 0, 2]))
        T.sum_(out).backward()
        np.testing.assert_allclose(x.grad, np.array([[2.0] * 3, [0.0] * 3, [1.0] * 3, [0.0] * 3]))

    def test_reductions(self, rng):
        x0 = rng.normal(size=(3, 4))
        check_op(lambda x: T.sum_(x, axis=0), x0)
        check_op(lambda x: T.sum_(x, axis=1, keepdims=True), x0)
        check_op(lambda x: T.mean(x, axis=0, keepdims=True), x0)
        check_op(T.mean, x0)


class TestNeuralPrimitives:
    def test_softmax_forward_matches_extended_precision_oracle(self, rng):
        # naive exp/sum oracle in longdouble
        x = rng.normal(size=4)
        e = np.exp(x.astype(np.longdouble))
        expected = (e / e.sum()).astype(np.float64)
        got = T.softmax(Tensor(x), axis=-1).data
        np.testing.assert_allclose(got, expected, atol=1e-12, rtol=0)

    def test_softmax_trivial_and_stability(self):
        np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5], atol=1e-15)
        np.testing.assert_allclose(T.softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5], atol=1e-15)

    def test_softmax_rows_sum_to_one(self, rng):
        y = T.softmax(Tensor(rng.normal(size=(7, 9)) * 50), axis=1).data
        np.testing.assert_allclose(y.sum(axis=1), np.ones(7), atol=1e-12, rtol=0)
        assert (y >= 0).all()

    def test_softmax_grad(self, rng):
        mixer = Tensor(rng.normal(size=(3, 5)))
        check_op(lambda x: T.mul(T.softmax(x, axis=1), mixer), rng.normal(size=(3, 5)))

    def test_gelu_values_against_erf_oracle(self):
        from math import erf as merf

        assert T.gelu(Tensor(0.0)).data == 0.0
        got = float(T.gelu(Tensor(1.0)).data)
        expected = 1.0 * 0.5 * (1 + merf(1.0 / np.sqrt(2)))
        assert abs(got - expected) < 1e-12
        assert abs(expected - 0.841345) < 1e-6
        assert abs(float(T.gelu(Tensor(-10.0)).data)) < 1e-9

    def test_gelu_grad(self, rng):
        check_op(T.gelu, rng.normal(size=(4, 4)))

    def test_smooth_l1_branches_and_grad(self, rng):
        # joint at |e| = 0.1 where both branches equal 0.05
        vals = T.smooth_l1(Tensor([0.1, -0.1, 0.2, 0.05]), beta=0.1).data
        np.testing.assert_allclose(vals, [0.05, 0.05, 0.15, 5 * 0.05**2], atol=1e-15)
        x0 = rng.normal(size=(6,)) * 0.3
        x0 = x0[np.abs(np.abs(x0) - 0.1) > 1e-3]  # stay off the joint
        check_op(lambda x: T.smooth_l1(x, beta=0.1), x0)

    def test_row_norms(self, rng):
        x0 = rng.normal(size=(5, 3)) + 0.5
        np.testing.assert_allclose(
            T.row_norms(Tensor(x0)).data, np.linalg.norm(x0, axis=1), atol=1e-12
        )
        check_op(T.row_norms, x0)

    def test_neg_xlogx_zero_convention_and_grad(self, rng):
        out = T.neg_xlogx(Tensor([0.0, 1.0, 0.5])).data
        np.testing.assert_allclose(out, [0.0, 0.0, -0.5 * np.log(0.5)], atol=1e-15)
        check_op(T.neg_xlogx, rng.uniform(0.1, 0.9, size=(4, 3)))


class TestConv:
    def test_identity_kernel(self, rng):
        x = rng.normal(size=(5, 6, 3))
        k = np.zeros((3, 3, 3, 3))
        for c in range(3):
            k[1, 1, c, c] = 1.0
        out = T.conv3x3(Tensor(x), Tensor(k), Tensor(np.zeros(3))).data
        np.testing.assert_allclose(out, x, atol=1e-15)

    def test_all_ones_kernel_on_ones_input(self):
        x = np.ones((3, 3, 1))
        k = np.ones((3, 3, 1, 1))
        out = T.conv3x3(Tensor(x), Tensor(k), Tensor(np.zeros(1))).data[:, :, 0]
        assert out[1, 1] == 9.0
        assert out[0, 0] == 4.0
        assert out[0, 1] == 6.0

    def test_against_quadruple_loop_oracle(self, rng):
        h, w, cin, cout = 4, 5, 2, 3
        x = rng.normal(size=(h, w, cin))
        k = rng.normal(size=(3, 3, cin, cout))
        b = rng.normal(size=cout)
        expected = np.zeros((h, w, cout))
        for i in range(h):
            for j in range(w):
                for di in range(3):
                    for dj in range(3):
                        si, sj = i + di - 1, j + dj - 1
                        if 0 <= si < h and 0 <= sj < w:
                            expected[i, j] += x[si, sj] @ k[di, dj]
        expected += b
        got = T.conv3x3(Tensor(x), Tensor(k), Tensor(b)).data
        np.testing.assert_allclose(got, expected, atol=1e-12, rtol=0)

    def test_linearity(self, rng):
        x = rng.normal(size=(4, 4, 2))
        y = rng.normal(size=(4, 4, 2))
        k = Tensor(rng.normal(size=(3, 3, 2, 2)))
        b = Tensor(np.zeros(2))
        lhs = T.conv3x3(Tensor(x + y), k, b).data
        rhs = T.conv3x3(Tensor(x), k, b).data + T.conv3x3(Tensor(y), k, b).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            T.conv3x3(Tensor(np.zeros((4, 4, 2))), Tensor(np.zeros((3, 3, 3, 2))), Tensor(np.zeros(2)))

    def test_grads_all_three_operands(self, rng):
        x0 = rng.normal(size=(3, 4, 2))
        k0 = rng.normal(size=(3, 3, 2, 2))
        b0 = rng.normal(size=(2,))
        check_op(lambda x: T.conv3x3(x, Tensor(k0), Tensor(b0)), x0)
        check_op(lambda k: T.conv3x3(Tensor(x0), k, Tensor(b0)), k0)
        check_op(lambda b: T.conv3x3(Tensor(x0), Tensor(k0), b), b0)


class TestBilinear:
    def test_constant_input_stays_constant(self):
        x = np.full((3, 5, 2), 7.25)
        out = T.bilinear_upsample(Tensor(x), 9, 11).data
        np.testing.assert_allclose(out, 7.25, atol=1e-12)

    def test_one_pixel_replicates(self):
        out = T.bilinear_upsample(Tensor(np.full((1, 1, 1), 3.5)), 4, 6).data
        np.testing.assert_allclose(out, 3.5)

    def test_2x2_to_4x4_hand_weights(self):
        # half-pixel centers: src = (i + 0.5) / 2 - 0.5 -> [-0.25, 0.25, 0.75, 1.25]
        # clamped to [0, 1]; weights per axis: [1, 0], [0.75, 0.25], [0.25, 0.75], [0, 1]
        x = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
        w = np.array([[1.0, 0.0], [0.75, 0.25], [0.25, 0.75], [0.0, 1.0]])
        expected = w @ x[:, :, 0] @ w.T
        got = T.bilinear_upsample(Tensor(x), 4, 4).data[:, :, 0]
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_same_size_is_identity(self, rng):
        x = rng.normal(size=(4, 6, 3))
        np.testing.assert_allclose(T.bilinear_upsample(Tensor(x), 4, 6).data, x, atol=1e-15)

    def test_grad(self, rng):
        check_op(lambda x: T.bilinear_upsample(x, 5, 7), rng.normal(size=(2, 3, 2)))


class TestGraphMechanics:
    def test_repeated_use_accumulates(self):
        x = T.parameter(np.array([2.0]))
        y = T.add(T.mul(x, x), x)  # x^2 + x -> grad 2x + 1 = 5
        y.backward(np.array([1.0]))
        np.testing.assert_allclose(x.grad, [5.0])

    def test_backward_requires_scalar(self):
        x = T.parameter(np.zeros((2, 2)))
        with pytest.raises(ShapeError):
            T.add(x, 1.0).backward()

    def test_no_grad_blocks_recording(self):
        x = T.parameter(np.ones(3))
        with T.no_grad():
            y = T.mul(x, 2.0)
        assert y._vjp is None and not y.requires_grad

    def test_purity_bit_identical(self):
        x = Tensor(np.linspace(-2, 2, 12).reshape(3, 4))
        a = T.gelu(T.softmax(x, axis=1)).data
        b = T.gelu(T.softmax(x, axis=1)).data
        assert np.array_equal(a, b)
