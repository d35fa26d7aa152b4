import numpy as np
import pytest

import tokenpool.head as head_mod
from tokenpool.encoder import EncoderOutputs
from tokenpool.head import (
    AsppWeights,
    ElmConfig,
    FusionConfig,
    HeadWeights,
    IrbWeights,
    aspp,
    collect_multilayer,
    elm,
    fuse,
    global_branch,
    init_head,
    irb,
    local_branch,
    local_fc_width,
    output_head,
    reduce_channels,
    waveblock,
)


def synthetic_outputs(rng, layers=3, w=3, h=2, dim=4):
    zs = [rng.standard_normal((w * h + 1, dim)).astype(np.float32) for _ in range(layers + 1)]
    return EncoderOutputs(layers=zs, attention=[], w=w, h=h)


class TestCollect:
    def test_k1_is_last_layer(self, rng):
        outs = synthetic_outputs(rng)
        feats = collect_multilayer(outs, 1)
        np.testing.assert_array_equal(feats.f_c[0], outs.layers[-1][0])
        assert feats.f_p.shape == (1, 2, 3, 4)

    def test_default_k_shape(self, rng):
        outs = synthetic_outputs(rng, layers=8)
        feats = collect_multilayer(outs, 6)
        assert feats.f_c.shape == (6, 4)

    def test_stacking_order_tagged(self):
        # layer-tagged constants: slab j must come from layer L-k+1+j
        layers = [np.full((7, 2), float(i), dtype=np.float32) for i in range(3)]
        outs = EncoderOutputs(layers=layers, attention=[], w=3, h=2)
        feats = collect_multilayer(outs, 2)
        assert np.all(feats.f_c[0] == 1.0) and np.all(feats.f_c[1] == 2.0)
        assert np.all(feats.f_p[0] == 1.0) and np.all(feats.f_p[1] == 2.0)

    def test_k_out_of_range(self, rng):
        outs = synthetic_outputs(rng, layers=2)
        with pytest.raises(ValueError):
            collect_multilayer(outs, 3)


class TestBranches:
    def test_global_zero(self):
        f_c = np.zeros((2, 3), dtype=np.float32)
        out = global_branch(f_c, np.zeros((6, 4), dtype=np.float32), np.zeros(4, dtype=np.float32))
        assert np.all(out == 0)

    def test_global_k1_identity(self, rng):
        z = rng.standard_normal(5).astype(np.float32)
        out = global_branch(z[None, :], np.eye(5, dtype=np.float32), np.zeros(5, dtype=np.float32))
        np.testing.assert_allclose(out, z, atol=1e-6)

    def test_reduce_k1_identity(self, rng):
        f_p = rng.standard_normal((1, 2, 3, 4)).astype(np.float32)
        w = np.eye(4, dtype=np.float32).reshape(1, 1, 4, 4)
        out = reduce_channels(f_p, w, np.zeros(4, dtype=np.float32))
        np.testing.assert_allclose(out, f_p[0], atol=1e-6)

    def test_reduce_matches_per_position_fc(self, rng):
        from tokenpool.kernels import fc

        f_p = rng.standard_normal((2, 3, 2, 4)).astype(np.float32)
        w = rng.standard_normal((1, 1, 8, 5)).astype(np.float32)
        b = rng.standard_normal(5).astype(np.float32)
        out = reduce_channels(f_p, w, b)
        for y in range(3):
            for x in range(2):
                vec = np.concatenate([f_p[j, y, x] for j in range(2)])
                np.testing.assert_allclose(out[y, x], fc(vec, w[0, 0], b), rtol=1e-5, atol=1e-6)

    def test_local_branch_is_fc_of_mean(self, rng):
        from tokenpool.kernels import fc

        y = rng.standard_normal((3, 4, 5)).astype(np.float32)
        w = rng.standard_normal((5, 6)).astype(np.float32)
        b = rng.standard_normal(6).astype(np.float32)
        mean = y.astype(np.float64).reshape(-1, 5).mean(axis=0).astype(np.float32)
        np.testing.assert_allclose(local_branch(y, w, b), fc(mean, w, b), rtol=1e-5, atol=1e-6)


class TestWaveblock:
    def test_infer_identity(self, rng):
        y = rng.standard_normal((4, 3, 2)).astype(np.float32)
        out = waveblock(y, ElmConfig(mode="infer"), np.random.default_rng(0))
        assert out is y or np.array_equal(out, y)

    def test_single_block_identity(self, rng):
        y = rng.standard_normal((4, 3, 2)).astype(np.float32)
        cfg = ElmConfig(wb_blocks=1, mode="train")
        assert np.array_equal(waveblock(y, cfg, np.random.default_rng(5)), y)

    def test_hand_case(self, rng):
        y = rng.standard_normal((4, 2, 2)).astype(np.float32)
        cfg = ElmConfig(wb_blocks=2, wb_scale=0.5, mode="train")

        class Fixed:
            def integers(self, n):
                return 0

        out = waveblock(y, cfg, Fixed())
        np.testing.assert_array_equal(out[:2], y[:2])
        np.testing.assert_allclose(out[2:], 0.5 * y[2:], atol=1e-7)

    def test_too_many_blocks(self, rng):
        y = rng.standard_normal((2, 2, 2)).astype(np.float32)
        with pytest.raises(ValueError):
            waveblock(y, ElmConfig(wb_blocks=3, mode="train"), np.random.default_rng(0))


def make_elm_weights(rng, dim=4, expansion=2, rates=(1, 2)):
    d_prime = dim * expansion
    irb_w = IrbWeights(
        expand_w=rng.standard_normal((1, 1, dim, d_prime)).astype(np.float32) * 0.1,
        expand_b=np.zeros(d_prime, dtype=np.float32),
        depthwise_w=rng.standard_normal((3, 3, 1, d_prime)).astype(np.float32) * 0.1,
        depthwise_b=np.zeros(d_prime, dtype=np.float32),
        squeeze_w=rng.standard_normal((1, 1, d_prime, dim)).astype(np.float32) * 0.1,
        squeeze_b=np.zeros(dim, dtype=np.float32),
    )
    aspp_w = AsppWeights(
        branch_w=[rng.standard_normal((3, 3, dim, dim)).astype(np.float32) * 0.1 for _ in rates],
        branch_b=[np.zeros(dim, dtype=np.float32) for _ in rates],
        reduce_w=rng.standard_normal((1, 1, len(rates) * dim, dim)).astype(np.float32) * 0.1,
        reduce_b=np.zeros(dim, dtype=np.float32),
    )
    return HeadWeights(
        global_w=None, global_b=None, reduce_w=None, reduce_b=None,
        irb=irb_w, aspp=aspp_w, local_w=None, local_b=None,
        out_w=np.zeros((1, 1), dtype=np.float32), out_b=np.zeros(1, dtype=np.float32),
    )


class TestIrbAspp:
    def test_irb_zero_weights_identity(self, rng):
        y = rng.standard_normal((3, 3, 4)).astype(np.float32)
        w = IrbWeights(
            expand_w=np.zeros((1, 1, 4, 8), dtype=np.float32), expand_b=np.zeros(8, dtype=np.float32),
            depthwise_w=np.zeros((3, 3, 1, 8), dtype=np.float32), depthwise_b=np.zeros(8, dtype=np.float32),
            squeeze_w=np.zeros((1, 1, 8, 4), dtype=np.float32), squeeze_b=np.zeros(4, dtype=np.float32),
        )
        np.testing.assert_allclose(irb(y, w), y, atol=1e-7)

    def test_irb_shape_preserved(self, rng):
        hw = make_elm_weights(rng)
        y = rng.standard_normal((5, 7, 4)).astype(np.float32)
        assert irb(y, hw.irb).shape == y.shape

    def test_aspp_zero_branches(self, rng):
        hw = make_elm_weights(rng)
        zero_aspp = AsppWeights(
            branch_w=[np.zeros_like(w) for w in hw.aspp.branch_w],
            branch_b=hw.aspp.branch_b,
            reduce_w=hw.aspp.reduce_w, reduce_b=hw.aspp.reduce_b,
        )
        y = rng.standard_normal((3, 3, 4)).astype(np.float32)
        out = aspp(y, zero_aspp, ElmConfig(dilation_rates=(1, 2)))
        np.testing.assert_allclose(out, 0.0, atol=1e-7)

    def test_aspp_single_delta_branch_identity(self, rng):
        dim = 3
        bw = np.zeros((3, 3, dim, dim), dtype=np.float32)
        for c in range(dim):
            bw[1, 1, c, c] = 1.0
        w = AsppWeights(
            branch_w=[bw], branch_b=[np.zeros(dim, dtype=np.float32)],
            reduce_w=np.eye(dim, dtype=np.float32).reshape(1, 1, dim, dim),
            reduce_b=np.zeros(dim, dtype=np.float32),
        )
        y = rng.standard_normal((4, 4, dim)).astype(np.float32)
        out = aspp(y, w, ElmConfig(dilation_rates=(1,)))
        np.testing.assert_allclose(out, y, atol=1e-6)

    def test_aspp_shape_small_map_large_rates(self, rng):
        dim = 4
        cfg = ElmConfig(dilation_rates=(6, 12, 18))
        w = AsppWeights(
            branch_w=[rng.standard_normal((3, 3, dim, dim)).astype(np.float32) for _ in range(3)],
            branch_b=[np.zeros(dim, dtype=np.float32) for _ in range(3)],
            reduce_w=rng.standard_normal((1, 1, 3 * dim, dim)).astype(np.float32),
            reduce_b=np.zeros(dim, dtype=np.float32),
        )
        y = rng.standard_normal((7, 7, dim)).astype(np.float32)
        assert aspp(y, w, cfg).shape == (7, 7, dim)


class TestElm:
    def test_infer_equals_aspp_of_irb(self, rng):
        hw = make_elm_weights(rng)
        cfg = ElmConfig(dilation_rates=(1, 2), expansion=2, mode="infer")
        y = rng.standard_normal((4, 4, 4)).astype(np.float32)
        out = elm(y, hw, cfg, np.random.default_rng(0))
        want = aspp(irb(y, hw.irb), hw.aspp, cfg)
        np.testing.assert_array_equal(out, want)

    def test_zero_reduce_gives_zero(self, rng):
        hw = make_elm_weights(rng)
        zero_aspp = AsppWeights(
            branch_w=hw.aspp.branch_w, branch_b=hw.aspp.branch_b,
            reduce_w=np.zeros_like(hw.aspp.reduce_w), reduce_b=np.zeros_like(hw.aspp.reduce_b),
        )
        hw2 = HeadWeights(**{**hw.__dict__, "aspp": zero_aspp})
        cfg = ElmConfig(dilation_rates=(1, 2), expansion=2, mode="infer")
        y = rng.standard_normal((3, 3, 4)).astype(np.float32)
        np.testing.assert_allclose(elm(y, hw2, cfg, np.random.default_rng(0)), 0.0, atol=1e-7)

    def test_call_order(self, rng, monkeypatch):
        calls = []
        monkeypatch.setattr(head_mod, "waveblock", lambda y, cfg, rng_: calls.append("WB") or y)
        monkeypatch.setattr(head_mod, "irb", lambda y, w: calls.append("IRB") or y)
        monkeypatch.setattr(head_mod, "aspp", lambda y, w, cfg: calls.append("ASPP") or y)
        y = rng.standard_normal((3, 3, 4)).astype(np.float32)
        elm(y, make_elm_weights(rng), ElmConfig(dilation_rates=(1, 2)), np.random.default_rng(0))
        assert calls == ["WB", "IRB", "WB", "ASPP"]

    def test_infer_deterministic(self, rng):
        hw = make_elm_weights(rng)
        cfg = ElmConfig(dilation_rates=(1, 2), expansion=2, mode="infer")
        y = rng.standard_normal((4, 4, 4)).astype(np.float32)
        a = elm(y, hw, cfg, np.random.default_rng(1))
        b = elm(y, hw, cfg, np.random.default_rng(99))
        assert np.array_equal(a, b)


class TestFuse:
    def test_hadamard_identity(self, rng):
        y = rng.standard_normal((2, 3, 4)).astype(np.float32)
        out = fuse(y, np.ones_like(y), FusionConfig(method="hadamard"))
        np.testing.assert_allclose(out, y, atol=1e-7)

    def test_sum_hadamard_commutative(self, rng):
        y = rng.standard_normal((2, 3, 4)).astype(np.float32)
        u = rng.standard_normal((2, 3, 4)).astype(np.float32)
        for method in ("sum", "hadamard"):
            cfg = FusionConfig(method=method)
            np.testing.assert_array_equal(fuse(y, u, cfg), fuse(u, y, cfg))

    def test_orthogonal_hand_case(self):
        y = np.array([[[1.0, 1.0]]], dtype=np.float32)
        u = np.array([[[2.0, 0.0]]], dtype=np.float32)
        out = fuse(y, u, FusionConfig(method="orthogonal"))
        np.testing.assert_allclose(out[0, 0], [0.0, 1.0, 2.0, 0.0], atol=1e-6)

    def test_orthogonal_residual_orthogonality(self, rng):
        y = rng.standard_normal((4, 5, 6)).astype(np.float32)
        u = rng.standard_normal((4, 5, 6)).astype(np.float32)
        out = fuse(y, u, FusionConfig(method="orthogonal"))
        resid = out[:, :, :6].astype(np.float64)
        u64 = u.astype(np.float64)
        dots = np.abs(np.sum(resid * u64, axis=2))
        bound = 1e-5 * np.linalg.norm(y, axis=2) * np.linalg.norm(u, axis=2)
        assert np.all(dots <= bound + 1e-12)

    def test_orthogonal_degenerate_direction(self, rng):
        y = rng.standard_normal((1, 1, 3)).astype(np.float32)
        u = np.zeros_like(y)
        out = fuse(y, u, FusionConfig(method="orthogonal"))
        np.testing.assert_allclose(out[0, 0, :3], y[0, 0], atol=1e-7)

    def test_fast_normalized_closed_form(self, rng):
        y = rng.standard_normal((2, 2, 3)).astype(np.float32)
        u = rng.standard_normal((2, 2, 3)).astype(np.float32)
        v, eps = 0.7, 1e-4
        out = fuse(y, u, FusionConfig(method="fast_normalized", v1=v, v2=v, eps=eps))
        want = v * (y.astype(np.float64) + u.astype(np.float64)) / (2 * v + eps)
        np.testing.assert_allclose(out, want, atol=1e-6)

    def test_fast_normalized_range(self, rng):
        y = rng.standard_normal((3, 3, 2)).astype(np.float32)
        u = rng.standard_normal((3, 3, 2)).astype(np.float32)
        v1, v2, eps = 0.4, 1.1, 1e-4
        out = fuse(y, u, FusionConfig(method="fast_normalized", v1=v1, v2=v2, eps=eps))
        wsum = v1 + v2
        lo = np.minimum(y, u) * wsum / (wsum + eps)
        hi = np.maximum(y, u)
        assert np.all(out >= np.minimum(lo, hi) - 1e-6)
        assert np.all(out <= np.maximum(lo, hi) + 1e-6)

    def test_none_variants(self, rng):
        y = rng.standard_normal((2, 2, 2)).astype(np.float32)
        u = rng.standard_normal((2, 2, 2)).astype(np.float32)
        assert np.array_equal(fuse(y, u, FusionConfig(method="none_without_elm")), y)
        assert np.array_equal(fuse(y, u, FusionConfig(method="none_with_elm")), u)

    def test_concat_channels(self, rng):
        y = rng.standard_normal((2, 2, 3)).astype(np.float32)
        u = rng.standard_normal((2, 2, 3)).astype(np.float32)
        out = fuse(y, u, FusionConfig(method="concat"))
        assert out.shape == (2, 2, 6)
        np.testing.assert_array_equal(out[:, :, :3], y)

    def test_wide_fusion_widths(self):
        assert local_fc_width(8, "orthogonal") == 16
        assert local_fc_width(8, "concat") == 16
        assert local_fc_width(8, "sum") == 8


class TestOutputHead:
    def make_head(self, n=4):
        return HeadWeights(
            global_w=None, global_b=None, reduce_w=None, reduce_b=None,
            irb=None, aspp=None, local_w=None, local_b=None,
            out_w=np.zeros((2 * n, n), dtype=np.float32),
            out_b=np.arange(n, dtype=np.float32),
            bn_mean=np.full(n, 0.5, dtype=np.float32),
            bn_var=np.full(n, 4.0, dtype=np.float32),
            bn_gamma=np.full(n, 2.0, dtype=np.float32),
            bn_beta=np.zeros(n, dtype=np.float32),
        )

    def test_infer_zero_inputs_gives_bias(self):
        hw = self.make_head()
        out = output_head(np.zeros(4, dtype=np.float32), np.zeros(4, dtype=np.float32), hw)
        np.testing.assert_array_equal(out, hw.out_b)

    def test_infer_deterministic(self, rng):
        hw = self.make_head()
        u_c = rng.standard_normal(4).astype(np.float32)
        u_p = rng.standard_normal(4).astype(np.float32)
        assert np.array_equal(output_head(u_c, u_p, hw), output_head(u_c, u_p, hw))

    def test_concat_order_tagged(self, rng):
        n = 3
        out_w = np.concatenate([np.eye(n), 10.0 * np.eye(n)]).astype(np.float32)
        hw = HeadWeights(
            global_w=None, global_b=None, reduce_w=None, reduce_b=None,
            irb=None, aspp=None, local_w=None, local_b=None,
            out_w=out_w, out_b=np.zeros(n, dtype=np.float32),
        )
        u_c = np.array([1.0, 2.0, 3.0], dtype=np.float32)
        u_p = np.array([4.0, 5.0, 6.0], dtype=np.float32)
        out = output_head(u_c, u_p, hw)
        np.testing.assert_allclose(out, u_c + 10.0 * u_p, atol=1e-5)

    def test_train_applies_bn(self, rng):
        hw = self.make_head()
        u_c = rng.standard_normal(4).astype(np.float32)
        u_p = rng.standard_normal(4).astype(np.float32)
        train = output_head(u_c, u_p, hw, mode="train", dropout=0.0)
        infer = output_head(u_c, u_p, hw)
        assert not np.allclose(train, infer)

    def test_single_branch(self, rng):
        n = 4
        hw = HeadWeights(
            global_w=None, global_b=None, reduce_w=None, reduce_b=None,
            irb=None, aspp=None, local_w=None, local_b=None,
            out_w=np.eye(n, dtype=np.float32), out_b=np.zeros(n, dtype=np.float32),
        )
        u_c = rng.standard_normal(n).astype(np.float32)
        np.testing.assert_allclose(output_head(u_c, None, hw), u_c, atol=1e-6)


def test_init_head_shapes(rng):
    cfg = ElmConfig(dilation_rates=(1, 2), expansion=2)
    hw = init_head(dim=8, k=3, out_dim=16, fusion_method="orthogonal", elm_cfg=cfg, rng=rng)
    assert hw.global_w.shape == (24, 16)
    assert hw.reduce_w.shape == (1, 1, 24, 8)
    assert hw.irb.expand_w.shape == (1, 1, 8, 16)
    assert hw.local_w.shape == (16, 16)  # 2D wide for orthogonal fusion
    assert hw.out_w.shape == (32, 16)
