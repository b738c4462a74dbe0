"""Point branch tests: permutation equivariance, channel-attention oracle."""

import numpy as np
import pytest

from catpose import ops
from catpose import pointformer as pof
from catpose import tensor as T
from catpose.gradcheck import grad_check
from catpose.rng import Prng
from catpose.tensor import Tensor


def desk_config():
    return pof.PointformerConfig(
        channels=(8, 16, 24, 32),
        heads=(1, 2, 3, 4),
        expansion=(8, 8, 4, 4),
        lift_dim=16,
        out_dim=64,
    )


@pytest.fixture(scope="module")
def desk_model():
    cfg = desk_config()
    return pof.init_pointformer(Prng(200), cfg), cfg


@pytest.fixture(scope="module")
def paper_cfg():
    return pof.PointformerConfig()


class TestLift:
    def test_duplicate_points_identical_rows(self, desk_model):
        params, _ = desk_model
        pts = np.array([[0.1, 0.2, 0.3], [0.1, 0.2, 0.3], [0.5, -0.1, 0.0]])
        out = pof.lift_points(params, Tensor(pts)).data
        np.testing.assert_array_equal(out[0], out[1])

    def test_permutation_equivariant(self, desk_model):
        params, _ = desk_model
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(11, 3))
        perm = rng.permutation(11)
        a = pof.lift_points(params, Tensor(pts)).data[perm]
        b = pof.lift_points(params, Tensor(pts[perm])).data
        np.testing.assert_array_equal(a, b)

    def test_matches_per_point_two_layer_oracle(self, desk_model):
        params, _ = desk_model
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(5, 3))
        from math import erf, sqrt

        def gelu1(v):
            return v * 0.5 * (1 + erf(v / sqrt(2)))

        expected = np.zeros((5, params.lift_b.out_dim))
        for i, pt in enumerate(pts):
            h1 = np.array([gelu1(v) for v in pt @ params.lift_a.weight.data + params.lift_a.bias.data])
            expected[i] = [gelu1(v) for v in h1 @ params.lift_b.weight.data + params.lift_b.bias.data]
        got = pof.lift_points(params, Tensor(pts)).data
        np.testing.assert_allclose(got, expected, atol=1e-12)


class TestEmbed:
    def test_paper_stage_widths(self, paper_cfg):
        assert paper_cfg.channels == (32, 64, 160, 256)
        params = pof.init_pointformer(Prng(3), paper_cfg)
        lifted = Tensor(np.zeros((7, paper_cfg.lift_dim)))
        shapes = [pof.input_feature_embed(s, lifted).shape for s in params.stages]
        assert shapes == [(7, 32), (7, 64), (7, 160), (7, 256)]

    def test_zero_input_zero_bias_gives_zero(self, desk_model):
        params, _ = desk_model
        out = pof.input_feature_embed(params.stages[0], Tensor(np.zeros((4, 16)))).data
        np.testing.assert_array_equal(out, np.zeros((4, 8)))

    def test_matches_linear_oracle(self, desk_model):
        params, _ = desk_model
        rng = np.random.default_rng(2)
        x = rng.normal(size=(6, 16))
        stage = params.stages[2]
        expected = x @ stage.embed.weight.data + stage.embed.bias.data
        np.testing.assert_allclose(
            pof.input_feature_embed(stage, Tensor(x)).data, expected, atol=1e-12
        )


def naive_cwmha(attn, x, num_heads):
    """Triple-loop channelwise attention oracle."""
    n, c = x.shape
    d = c // num_heads
    q = x @ attn.query.weight.data + attn.query.bias.data
    k = x @ attn.key.weight.data + attn.key.bias.data
    v = x @ attn.value.weight.data + attn.value.bias.data
    merged = np.zeros((n, c))
    for h in range(num_heads):
        qh, kh, vh = (m[:, h * d : (h + 1) * d] for m in (q, k, v))
        logits = np.zeros((d, d))
        for a in range(d):
            for b in range(d):
                logits[a, b] = sum(qh[i, a] * kh[i, b] for i in range(n)) / np.sqrt(d)
        weights = np.zeros((d, d))
        for a in range(d):
            e = np.exp(logits[a] - logits[a].max())
            weights[a] = e / e.sum()
        for i in range(n):
            for a in range(d):
                merged[i, h * d + a] = sum(weights[a, b] * vh[i, b] for b in range(d))
    return merged @ attn.out.weight.data + attn.out.bias.data


class TestCwmha:
    def make_attn(self, c, seed):
        p = Prng(seed)
        return pof.CwmhaParams(
            query=ops.init_linear(p.derive(0), c, c),
            key=ops.init_linear(p.derive(1), c, c),
            value=ops.init_linear(p.derive(2), c, c),
            out=ops.init_linear(p.derive(3), c, c),
        )

    def test_permutation_equivariance(self):
        # exact in exact arithmetic; row order changes summation order in
        # the channel contraction, so 64-bit agreement is to 1e-10
        attn = self.make_attn(6, 20)
        rng = np.random.default_rng(4)
        x = rng.normal(size=(13, 6))
        perm = rng.permutation(13)
        a = pof.cwmha_attention(attn, Tensor(x), 2).data[perm]
        b = pof.cwmha_attention(attn, Tensor(x[perm]), 2).data
        assert np.abs(a - b).max() < 1e-10

    def test_stage1_channel_matrix_is_cxc(self, paper_cfg):
        # weight matrix per head is d x d; with one head at stage 1 it is C1 x C1
        assert paper_cfg.channels[0] // paper_cfg.heads[0] == 32

    def test_single_head_matches_triple_loop_oracle(self):
        attn = self.make_attn(5, 21)
        rng = np.random.default_rng(5)
        x = rng.normal(size=(9, 5))
        expected = naive_cwmha(attn, x, 1)
        got = pof.cwmha_attention(attn, Tensor(x), 1).data
        np.testing.assert_allclose(got, expected, atol=1e-10)

    def test_multi_head_matches_oracle(self):
        attn = self.make_attn(8, 22)
        rng = np.random.default_rng(6)
        x = rng.normal(size=(7, 8))
        np.testing.assert_allclose(
            pof.cwmha_attention(attn, Tensor(x), 2).data, naive_cwmha(attn, x, 2), atol=1e-10
        )

    def test_channel_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(7)
        q = rng.normal(size=(30, 6))
        k = rng.normal(size=(30, 6))
        w = T.softmax(Tensor(q.T @ k / np.sqrt(6)), axis=1).data
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


class TestFfn:
    def make_ffn(self, c, ce, seed):
        p = Prng(seed)
        return pof.PointFfnParams(
            norm=ops.init_norm(c),
            expand=ops.init_linear(p.derive(0), c, ce),
            mix=ops.init_linear(p.derive(1), ce, ce),
            project=ops.init_linear(p.derive(2), ce, c),
        )

    def test_zeroed_projection_is_identity(self):
        ffn = self.make_ffn(4, 8, 23)
        ffn.project.weight.data[:] = 0.0
        x = np.random.default_rng(8).normal(size=(5, 4))
        np.testing.assert_allclose(pof.ffn_forward(ffn, Tensor(x)).data, x, atol=1e-15)

    def test_paper_stage4_expanded_width(self, paper_cfg):
        assert paper_cfg.expanded(3) == 1024

    def test_matches_straight_line_composition(self):
        ffn = self.make_ffn(3, 6, 24)
        x = np.random.default_rng(9).normal(size=(8, 3))
        y = ops.linear(ffn.expand, ops.instance_norm(ffn.norm, Tensor(x)))
        y = T.gelu(ops.linear(ffn.mix, y))
        expected = ops.linear(ffn.project, y).data + x
        np.testing.assert_allclose(pof.ffn_forward(ffn, Tensor(x)).data, expected, atol=1e-12)


class TestEndToEnd:
    def test_paper_level_shapes_smallN(self, paper_cfg):
        params = pof.init_pointformer(Prng(25), paper_cfg)
        pts = np.random.default_rng(10).normal(size=(50, 3))
        with T.no_grad():
            levels = pof.encoder_forward(params, paper_cfg, Tensor(pts))
            out = pof.decoder_forward(params.decoder, paper_cfg, levels)
        assert [lv.shape for lv in levels] == [(50, 32), (50, 64), (50, 160), (50, 256)]
        assert out.shape == (50, 64)

    def test_decoder_concat_width(self, desk_model):
        params, cfg = desk_model
        assert params.decoder.fuse.in_dim == 4 * cfg.out_dim == 256

    def test_full_permutation_equivariance(self, desk_model):
        params, cfg = desk_model
        rng = np.random.default_rng(11)
        pts = rng.normal(size=(40, 3)) * 0.2
        with T.no_grad():
            base = pof.forward(params, cfg, Tensor(pts)).data
            for _ in range(5):
                perm = rng.permutation(40)
                out = pof.forward(params, cfg, Tensor(pts[perm])).data
                assert np.abs(out - base[perm]).max() < 1e-10

    def test_duplicated_point_reordering_invariance(self, desk_model):
        # duplicating a point and permuting leaves per-point outputs tied
        params, cfg = desk_model
        rng = np.random.default_rng(12)
        pts = rng.normal(size=(10, 3))
        doubled = np.concatenate([pts, pts[:1]], axis=0)
        with T.no_grad():
            out = pof.forward(params, cfg, Tensor(doubled)).data
        np.testing.assert_allclose(out[0], out[10], atol=1e-12)

    def test_deterministic(self, desk_model):
        params, cfg = desk_model
        pts = Tensor(np.random.default_rng(13).normal(size=(12, 3)))
        with T.no_grad():
            a = pof.forward(params, cfg, pts).data
            b = pof.forward(params, cfg, pts).data
        assert np.array_equal(a, b)


class TestGradients:
    def test_cwmha_block_grad(self):
        attn = TestCwmha().make_attn(4, 26)
        norm = ops.init_norm(4)
        x = Tensor(np.random.default_rng(14).normal(size=(9, 4)))
        mixer = Tensor(np.random.default_rng(15).normal(size=(9, 4)))

        def f():
            y = pof.cwmha_attention(attn, ops.instance_norm(norm, x), 2)
            return T.sum_(T.mul(y, mixer))

        params = [attn.query.weight, attn.key.weight, attn.value.weight,
                  attn.out.weight, attn.out.bias, norm.gain]
        assert grad_check(f, params, entries_per_param=4) < 1e-5

    def test_ffn_block_grad(self):
        ffn = TestFfn().make_ffn(3, 9, 27)
        x = Tensor(np.random.default_rng(16).normal(size=(7, 3)))
        mixer = Tensor(np.random.default_rng(17).normal(size=(7, 3)))

        def f():
            return T.sum_(T.mul(pof.ffn_forward(ffn, x), mixer))

        params = [ffn.norm.gain, ffn.norm.bias, ffn.expand.weight, ffn.mix.weight,
                  ffn.project.weight, ffn.project.bias]
        assert grad_check(f, params, entries_per_param=4) < 1e-5
