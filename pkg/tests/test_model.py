import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mapnet.errors import BadShape, UnconfiguredInputLength, ValidationError
from mapnet.model import (
    MAPnet,
    ModelConfig,
    MultiHeadAttention,
    Rebalance,
    TransformerEncoder,
    build_model,
    interp_matrix,
    mpjpe_loss,
    positional_encoding,
)

from fd import check_module


def tiny_cfg(**kw):
    base = dict(h1=8, h2=6, pose_audio_layers=1, fusion_layers=1, heads=2, ff_dim=16, tau=1.0, t_out=5,
                t_audio=150, dropout=0.0, decode_widths=[8, 8], fusion_strategy="custom")
    base.update(kw)
    return ModelConfig(**base)


def batch(cfg, b=2, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    pose = torch.randn(b, cfg.t_in, 39, generator=g, dtype=dtype) * 300
    audio = torch.randn(b, cfg.t_audio, 35, generator=g, dtype=dtype)
    gt = torch.randn(b, cfg.t_out, 13, 3, generator=g, dtype=dtype) * 300
    return pose, audio, gt


def test_config_defaults_and_validation():
    c = ModelConfig()
    assert (c.h1, c.h2, c.heads, c.ff_dim, c.t_out, c.pose_audio_layers, c.fusion_layers) == (160, 150, 8, 640, 150, 12, 2)
    assert ModelConfig.with_strategy("early").pose_audio_layers == 2
    assert ModelConfig.with_strategy("balanced").fusion_layers == 7
    with pytest.raises(ValidationError):
        ModelConfig(h1=30, heads=8)
    with pytest.raises(ValidationError):
        ModelConfig(pose_audio_layers=3, fusion_strategy="late")
    with pytest.raises(ValidationError):
        ModelConfig(decode_widths=[10])
    assert [ModelConfig(tau=t).t_in for t in (1.0, 0.5, 0.33)] == [150, 75, 50]


def test_embed_shapes_and_linearity():
    torch.manual_seed(0)
    m = MAPnet(ModelConfig(pose_audio_layers=1, fusion_layers=1, fusion_strategy="custom", decode_widths=[8, 8]))
    P = torch.randn(1, 150, 39)
    assert m.pose_embed(P).shape == (1, 150, 160)
    assert m.audio_embed(torch.randn(1, 150, 35)).shape == (1, 150, 160)
    with torch.no_grad():
        m.pose_embed.bias.zero_()
        np.testing.assert_allclose(m.pose_embed(2.5 * P).numpy(), 2.5 * m.pose_embed(P).numpy(), rtol=1e-5, atol=1e-5)
        out = m.audio_embed(torch.zeros(1, 150, 35))
        assert torch.equal(out, m.audio_embed.bias.expand(1, 150, 160))
        m.pose_embed.weight.zero_()
        assert not m.pose_embed(P).any()


def test_positional_encoding_closed_form():
    pe = positional_encoding(150, 160).numpy()
    assert pe.shape == (150, 160)
    assert np.all(pe[0, 0::2] == 0) and np.all(pe[0, 1::2] == 1)
    assert np.abs(pe).max() <= 1
    t, d = 7, 3
    i = d // 2
    assert pe[t, d] == pytest.approx(math.cos(t / 10000 ** (2 * i / 160)), abs=1e-12)
    assert pe[9, 10] == pytest.approx(math.sin(9 / 10000 ** (10 / 160)), abs=1e-12)


def test_encoder_shapes_and_attention_rows():
    torch.manual_seed(1)
    for T, H in ((4, 8), (17, 16), (50, 160)):
        enc = TransformerEncoder(H, 2, 4 if H > 8 else 2, 2 * H)
        assert enc(torch.randn(3, T, H)).shape == (3, T, H)
    mha = MultiHeadAttention(16, 4)
    _, w = mha(torch.randn(2, 9, 16), return_weights=True)
    assert w.shape == (2, 4, 9, 9)
    np.testing.assert_allclose(w.sum(-1).detach().numpy(), 1.0, atol=1e-6)
    with pytest.raises(BadShape):
        enc(torch.randn(1, 5, 12))


def test_encoder_gradient_check():
    torch.manual_seed(2)
    enc = TransformerEncoder(8, 2, 2, 16).double()
    x = torch.randn(1, 4, 8, dtype=torch.float64)
    target = torch.randn(1, 4, 8, dtype=torch.float64)
    errs = check_module(enc, lambda: ((enc(x) - target) ** 2).sum())
    assert max(errs.values()) < 1e-4, errs


def test_rebalance_shapes_and_identity():
    rb = Rebalance([50], 150)
    assert rb(torch.randn(2, 50, 160)).shape == (2, 150, 160)
    ident = Rebalance([150], 150, init="identity")
    x = torch.randn(2, 150, 160)
    assert torch.equal(ident(x), x)
    with pytest.raises(UnconfiguredInputLength):
        rb(torch.randn(2, 75, 160))


def test_rebalance_interp_init_preserves_linear_ramps():
    rb = Rebalance([50], 150)
    ramp = torch.linspace(0, 1, 50).view(1, 50, 1).expand(1, 50, 4)
    out = rb(ramp)
    np.testing.assert_allclose(out[0, :, 0].detach().numpy(), np.linspace(0, 1, 150), atol=1e-6)
    m = interp_matrix(5, 6).numpy()
    np.testing.assert_allclose(m.sum(axis=1), 1.0)


def test_rebalance_gradient_check():
    torch.manual_seed(3)
    rb = Rebalance([5], 6, init="xavier").double()
    x = torch.randn(1, 5, 4, dtype=torch.float64, requires_grad=True)
    target = torch.randn(1, 6, 4, dtype=torch.float64)
    errs = check_module(rb, lambda: ((rb(x) - target) ** 2).sum())
    assert max(errs.values()) < 1e-4, errs


def test_rebalance_fixed_has_no_parameters():
    rb = Rebalance([50], 150, learned=False)
    assert sum(p.numel() for p in rb.parameters()) == 0
    assert rb(torch.randn(1, 50, 8)).shape == (1, 150, 8)


def test_full_size_fusion_and_decode_shapes():
    torch.manual_seed(4)
    m = MAPnet(ModelConfig(pose_audio_layers=1, fusion_layers=1, fusion_strategy="custom", tau=0.33)).eval()
    pose, audio = torch.randn(1, 50, 39) * 300, torch.randn(1, 150, 35)
    with torch.no_grad():
        C = m.embed(pose, audio)
        assert C.shape == (1, 300, 160)
        out = m(pose, audio)
    assert out.shape == (1, 150, 13, 3)


def test_fusion_block_order_matters():
    torch.manual_seed(5)
    m = MAPnet(tiny_cfg()).double().eval()
    a, b = torch.randn(1, 6, 8, dtype=torch.float64), torch.randn(1, 6, 8, dtype=torch.float64)
    with torch.no_grad():
        assert not torch.allclose(m.fuse_and_decode(a, b), m.fuse_and_decode(b, a))
    with pytest.raises(BadShape):
        m.fuse_and_decode(a, b[:, :5])


def test_zero_final_layer_gives_bias():
    m = MAPnet(tiny_cfg()).double().eval()
    with torch.no_grad():
        m.head.fc3.weight.zero_()
        pose, audio, _ = batch(m.cfg)
        out = m(pose, audio)
    expected = (m.head.fc3.bias * 1000).view(5, 13, 3)
    assert torch.allclose(out[0], expected) and torch.allclose(out[1], expected)


def test_pose_stats_scale_inputs_and_outputs():
    m = MAPnet(tiny_cfg()).double().eval()
    rng = np.random.default_rng(0)
    m.set_pose_stats(rng.normal(500, 80, (20, 150, 39)))
    assert abs(m.pose_mean.mean().item() - 500) < 5 and abs(m.pose_std.mean().item() - 80) < 5
    with torch.no_grad():
        m.head.fc3.weight.zero_()
        m.head.fc3.bias.zero_()
        pose, audio, _ = batch(m.cfg)
        out = m(pose, audio)
    torch.testing.assert_close(out[0].reshape(5, 39), m.pose_mean.expand(5, 39))


def test_pe_only_in_branch_transformers():
    torch.manual_seed(6)
    m = MAPnet(tiny_cfg()).double().eval()
    assert m.pose_tf.use_pe and m.audio_tf.use_pe and not m.fusion_tf.use_pe
    perm = torch.randperm(12)
    C = torch.randn(1, 12, 8, dtype=torch.float64)
    with torch.no_grad():
        torch.testing.assert_close(m.fusion_tf(C[:, perm]), m.fusion_tf(C)[:, perm])
        x = torch.randn(1, 5, 8, dtype=torch.float64)
        p5 = torch.tensor([4, 2, 0, 1, 3])
        assert not torch.allclose(m.pose_tf(x[:, p5]), m.pose_tf(x)[:, p5], atol=1e-3)


def test_mpjpe_cases():
    gt = torch.zeros(1, 13, 3, dtype=torch.float64)
    pred = gt.clone()
    assert mpjpe_loss(pred, gt).item() == 0
    pred[0, 4] = torch.tensor([3.0, 4.0, 0.0])
    assert mpjpe_loss(pred, gt).item() == pytest.approx(5 / 13, abs=1e-15)
    with pytest.raises(BadShape):
        mpjpe_loss(pred, gt[:, :12])


def loop_mpjpe(pred, gt):
    total = 0.0
    for f in range(pred.shape[0]):
        frame = 0.0
        for j in range(13):
            frame += math.sqrt(sum((pred[f, j, a] - gt[f, j, a]) ** 2 for a in range(3)))
        total += frame / 13
    return total / pred.shape[0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_mpjpe_loop_oracle_and_translation(seed):
    rng = np.random.default_rng(seed)
    pred, gt = rng.normal(0, 100, (4, 13, 3)), rng.normal(0, 100, (4, 13, 3))
    got = mpjpe_loss(torch.from_numpy(pred), torch.from_numpy(gt)).item()
    assert got == pytest.approx(loop_mpjpe(pred, gt), rel=1e-12, abs=1e-9)
    assert got >= 0
    v = rng.normal(0, 500, 3)
    moved = mpjpe_loss(torch.from_numpy(pred + v), torch.from_numpy(gt + v)).item()
    assert moved == pytest.approx(got, rel=1e-9)


def test_build_model_kinds():
    cfg = tiny_cfg()
    for kind in ("mapnet", "mapnet_norebal", "pot", "lstm_po", "lstm_pa"):
        m = build_model(kind, cfg)
        assert m.kind == kind
    assert not build_model("mapnet_norebal", cfg).cfg.rebalance
    with pytest.raises(ValidationError):
        build_model("transformer_xl", cfg)


def test_mapnet_end_to_end_gradient_small():
    torch.manual_seed(7)
    m = MAPnet(tiny_cfg(t_audio=6)).double()
    pose, audio, gt = batch(m.cfg, seed=1)
    errs = check_module(m, lambda: mpjpe_loss(m(pose, audio), gt))
    assert max(errs.values()) < 1e-3, {k: v for k, v in errs.items() if v >= 1e-3}
