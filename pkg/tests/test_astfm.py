import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from dualvad.astfm import ASTFM, AttentionFusion, ChannelAttention, ConcatFusion


@pytest.fixture(autouse=True, scope="module")
def float64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


def params(conv):
    return conv.weight.detach()[:, :, 0, 0].numpy(), conv.bias.detach().numpy()


def test_reduction_must_divide_channels():
    with pytest.raises(ValueError, match="divide"):
        ChannelAttention(12, reduction=8)


def test_zero_j2_is_identity():
    ca = ChannelAttention(8, 4)
    nn_zero(ca.j2)
    x = torch.randn(2, 8, 5, 5)
    assert torch.equal(ca(x), x)


def nn_zero(conv):
    with torch.no_grad():
        conv.weight.zero_()
        conv.bias.zero_()


def test_single_pixel_pooling_degenerates():
    ca = ChannelAttention(4, 2)
    x = torch.randn(1, 4, 1, 1)
    g = ca.g(x)
    assert torch.allclose(ca(x), x + g * torch.sigmoid(g))


def test_hand_set_weights_match_oracle():
    # C=4, r=2 on a 2x2 feature, weights set by hand
    ca = ChannelAttention(4, 2)
    j1w = np.array([[0.5, -0.25, 0.1, 0.0], [-0.3, 0.2, 0.4, 0.6]])
    j1b = np.array([0.05, -0.1])
    j2w = np.array([[1.0, -0.5], [0.2, 0.3], [-0.7, 0.1], [0.0, 0.9]])
    j2b = np.array([0.0, 0.1, -0.2, 0.3])
    with torch.no_grad():
        ca.j1.weight.copy_(torch.tensor(j1w)[:, :, None, None])
        ca.j1.bias.copy_(torch.tensor(j1b))
        ca.j2.weight.copy_(torch.tensor(j2w)[:, :, None, None])
        ca.j2.bias.copy_(torch.tensor(j2b))
    x = np.arange(16, dtype=float).reshape(4, 2, 2) / 8 - 1
    got = ca(torch.tensor(x)[None])[0].detach().numpy()
    np.testing.assert_allclose(got, oracles.channel_attention(x, j1w, j1b, j2w, j2b), atol=1e-12)


def test_gate_input_variant():
    ca = ChannelAttention(4, 2, gate_input=True)
    x = torch.randn(1, 4, 3, 3)
    gate = torch.sigmoid(ca.g(x.mean((2, 3), keepdim=True)))
    assert torch.allclose(ca(x), x + x * gate)


def test_fuse_zero_final_layer_halves():
    fu = AttentionFusion(3)
    nn_zero(fu.conv2)
    xa, xm = torch.randn(2, 3, 4, 4), torch.randn(2, 3, 4, 4)
    out, w = fu(xa, xm)
    assert torch.allclose(w, torch.full_like(w, 0.5))
    assert torch.allclose(out, 0.5 * xa)


def test_fuse_zero_appearance_gives_zero():
    fu = AttentionFusion(3)
    out, _ = fu(torch.zeros(1, 3, 4, 4), torch.randn(1, 3, 4, 4) * 10)
    assert torch.equal(out, torch.zeros(1, 3, 4, 4))


def test_fuse_hand_set_scalar():
    # C_l=2 on a 1x1 map
    fu = AttentionFusion(2)
    w1 = np.array([[0.3, -0.2, 0.5, 0.1], [-0.4, 0.6, 0.2, -0.3]])
    b1 = np.array([0.1, -0.05])
    w2 = np.array([[0.8, -0.6], [0.25, 0.4]])
    b2 = np.array([-0.1, 0.2])
    with torch.no_grad():
        fu.conv1.weight.copy_(torch.tensor(w1)[:, :, None, None])
        fu.conv1.bias.copy_(torch.tensor(b1))
        fu.conv2.weight.copy_(torch.tensor(w2)[:, :, None, None])
        fu.conv2.bias.copy_(torch.tensor(b2))
    xa = np.array([1.5, -0.7]).reshape(2, 1, 1)
    xm = np.array([0.2, 0.9]).reshape(2, 1, 1)
    out, w = fu(torch.tensor(xa)[None], torch.tensor(xm)[None])
    exp_out, exp_w = oracles.fuse(xa, xm, w1, b1, w2, b2)
    np.testing.assert_allclose(out[0].detach().numpy(), exp_out, atol=1e-12)
    np.testing.assert_allclose(w[0].detach().numpy(), exp_w, atol=1e-12)


def test_fuse_random_matches_oracle():
    torch.manual_seed(3)
    fu = AttentionFusion(3)
    xa, xm = np.random.default_rng(3).normal(size=(2, 3, 2, 3))
    out, w = fu(torch.tensor(xa)[None], torch.tensor(xm)[None])
    exp_out, exp_w = oracles.fuse(xa, xm, *params(fu.conv1), *params(fu.conv2))
    np.testing.assert_allclose(out[0].detach().numpy(), exp_out, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.floats(0.1, 50), st.integers(0, 2**16))
def test_attention_range_and_magnitude(c, hw, scale, seed):
    torch.manual_seed(seed)
    m = ASTFM(2 * c, reduction=2)
    xa = torch.randn(2, 2 * c, hw, hw) * scale
    xm = torch.randn(2, 2 * c, hw, hw) * scale
    out, w = m(xa, xm)
    assert out.shape == xa.shape
    assert torch.all(w >= 0) and torch.all(w <= 1)
    assert torch.all(out.abs() <= xa.abs())


def test_attention_strictly_inside_unit_interval_for_moderate_inputs():
    torch.manual_seed(0)
    m = ASTFM(8, reduction=4)
    _, w = m(torch.randn(2, 8, 6, 6), torch.randn(2, 8, 6, 6))
    assert torch.all(w > 0) and torch.all(w < 1)


def test_fusion_shape_mismatch_names_level():
    m = ASTFM(4, reduction=2, level=2)
    with pytest.raises(ValueError, match="level 2"):
        m(torch.randn(1, 4, 4, 4), torch.randn(1, 4, 2, 2))
    with pytest.raises(ValueError, match="level 3"):
        ConcatFusion(4, level=3)(torch.randn(1, 4, 4, 4), torch.randn(1, 4, 4, 2))


def test_channel_attention_gradcheck():
    torch.manual_seed(1)
    ca = ChannelAttention(4, 2)
    x = torch.randn(1, 4, 3, 3, requires_grad=True)
    assert torch.autograd.gradcheck(ca, (x,), eps=1e-6, atol=1e-6, rtol=1e-3)


def test_fuse_gradcheck():
    torch.manual_seed(2)
    m = ASTFM(4, reduction=2)
    xa = torch.randn(1, 4, 3, 3, requires_grad=True)
    xm = torch.randn(1, 4, 3, 3, requires_grad=True)
    assert torch.autograd.gradcheck(lambda a, b: m(a, b)[0], (xa, xm), eps=1e-6, atol=1e-6, rtol=1e-3)
