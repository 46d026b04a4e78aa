import numpy as np
import pytest
import torch

from unmixsr.errors import InvalidArgumentError
from unmixsr.layers import perturb_parameters_
from unmixsr.scaca import (ChannelCrossAttention, ConvMixBlock, RelativePositionBias,
                           ScacaBlock, SelfModulate, SpatialCrossAttention,
                           pad_to_multiple, window_merge, window_partition)


def rand(shape, seed, dtype=torch.float64):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(shape, generator=gen, dtype=dtype)


def softmax_rows(mat):
    shifted = mat - mat.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def dense_spatial_oracle(mod, feat, ref):
    """Dense single-window attention computed straight from the weights."""
    c = feat.shape[1]
    m = feat.shape[2]
    tokens = feat[0].permute(1, 2, 0).reshape(m * m, c).numpy()
    ref_tokens = ref[0].permute(1, 2, 0).reshape(m * m, c).numpy()
    wqkv = mod.qkv.weight.detach().numpy()
    bqkv = mod.qkv.bias.detach().numpy()
    qkv = tokens @ wqkv.T + bqkv
    q, k, v = qkv[:, :c], qkv[:, c:2 * c], qkv[:, 2 * c:]
    v_mod = v * ref_tokens
    bias = mod.bias().detach().numpy()
    attn = softmax_rows(q @ k.T / np.sqrt(c) + bias)
    out = attn @ v_mod
    out = out @ mod.proj.weight.detach().numpy().T + mod.proj.bias.detach().numpy()
    return out.reshape(m, m, c).transpose(2, 0, 1)[None]


def dense_channel_oracle(mod, feat, ref):
    n, c, h, w = feat.shape
    fn = feat.numpy()

    def conv1x1(conv, x):
        wt = conv.weight.detach().numpy().reshape(c, c)
        bs = conv.bias.detach().numpy()
        return np.einsum("oc,chw->ohw", wt, x[0]) + bs[:, None, None]

    q = conv1x1(mod.q, fn).reshape(c, h * w)
    k = conv1x1(mod.k, fn).reshape(c, h * w)
    v = conv1x1(mod.v, fn).reshape(c, h * w) * ref[0].numpy().reshape(c, h * w)
    attn = softmax_rows(q @ k.T / np.sqrt(c))
    out = (attn @ v).reshape(1, c, h, w)
    wt = mod.proj.weight.detach().numpy().reshape(c, c)
    bs = mod.proj.bias.detach().numpy()
    return np.einsum("oc,nchw->nohw", wt, out) + bs[None, :, None, None]


class TestWindowPartition:
    def test_round_trip_bit_identical(self):
        x = rand((2, 5, 8, 12), 0)
        tokens = window_partition(x, 4)
        assert tokens.shape == (2 * 2 * 3, 16, 5)
        back = window_merge(tokens, 4, 2, 8, 12)
        assert torch.equal(back, x)

    def test_non_divisible_rejected(self):
        with pytest.raises(InvalidArgumentError):
            window_partition(rand((1, 2, 7, 8), 0), 4)

    def test_pad_to_multiple_replicates(self):
        x = rand((1, 2, 5, 6), 1)
        padded = pad_to_multiple(x, 4)
        assert padded.shape == (1, 2, 8, 8)
        assert torch.equal(padded[:, :, :5, :6], x)
        assert torch.equal(padded[:, :, 5, :6], x[:, :, 4, :])
        assert torch.equal(padded[:, :, :5, 7], x[:, :, :, 5])


class TestSelfModulate:
    def test_zero_weights_scale_by_three_halves(self):
        mod = SelfModulate(width=4).double()
        with torch.no_grad():
            mod.gate.weight.zero_()
            mod.gate.bias.zero_()
        x = rand((1, 4, 6, 6), 0)
        assert torch.allclose(mod(x), 1.5 * x, atol=1e-12)

    def test_shape_preserved(self):
        mod = SelfModulate(width=3).double()
        x = rand((2, 3, 5, 7), 1)
        assert mod(x).shape == x.shape

    def test_matches_scalar_loop(self):
        mod = SelfModulate(width=2).double()
        perturb_parameters_(mod, seed=2, std=0.4)
        x = rand((1, 2, 6, 6), 3)
        out = mod(x).detach().numpy()
        xn = x.numpy()
        weight = mod.gate.weight.detach().numpy()  # (2, 1, 5, 5) depthwise
        bias = mod.gate.bias.detach().numpy()
        for c in range(2):
            for y in range(6):
                for x_ in range(6):
                    acc = bias[c]
                    for dy in range(5):
                        for dx in range(5):
                            yy = y + dy - 2
                            xx = x_ + dx - 2
                            if 0 <= yy < 6 and 0 <= xx < 6:  # zero padding
                                acc += weight[c, 0, dy, dx] * xn[0, c, yy, xx]
                    gate = 1.0 / (1.0 + np.exp(-acc))
                    expected = xn[0, c, y, x_] * (1.0 + gate)
                    assert abs(out[0, c, y, x_] - expected) < 1e-6


class TestRelativePositionBias:
    def test_bias_depends_only_on_offset(self):
        mod = RelativePositionBias(window=4)
        with torch.no_grad():
            mod.table.normal_(0, 1.0, generator=torch.Generator().manual_seed(0))
        bias = mod().detach().numpy()
        coords = [(i // 4, i % 4) for i in range(16)]
        seen = {}
        for a in range(16):
            for b in range(16):
                delta = (coords[a][0] - coords[b][0], coords[a][1] - coords[b][1])
                if delta in seen:
                    assert bias[a, b] == seen[delta]
                else:
                    seen[delta] = bias[a, b]


class TestSpatialCrossAttention:
    def _dense_oracle(self, mod, feat, ref):
        return dense_spatial_oracle(mod, feat, ref)

    def test_ones_reference_matches_dense_self_attention(self):
        mod = SpatialCrossAttention(width=5, window=4).double()
        perturb_parameters_(mod, seed=1, std=0.3)
        feat = rand((1, 5, 4, 4), 2)
        ones = torch.ones(1, 5, 4, 4, dtype=torch.float64)
        out = mod(feat, ones)
        expected = self._dense_oracle(mod, feat, ones)
        assert np.abs(out.detach().numpy() - expected).max() < 1e-5

    def test_modulated_matches_dense_oracle(self):
        mod = SpatialCrossAttention(width=4, window=4).double()
        perturb_parameters_(mod, seed=3, std=0.3)
        feat = rand((1, 4, 4, 4), 4)
        ref = rand((1, 4, 4, 4), 5)
        out = mod(feat, ref)
        expected = self._dense_oracle(mod, feat, ref)
        assert np.abs(out.detach().numpy() - expected).max() < 1e-5

    def test_attention_rows_sum_to_one(self):
        mod = SpatialCrossAttention(width=4, window=4).double()
        perturb_parameters_(mod, seed=6, std=0.5)
        _, attn = mod(rand((1, 4, 8, 8), 7), rand((1, 4, 8, 8), 8), return_attn=True)
        sums = attn.sum(dim=-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)

    def test_window_larger_than_padded_raster_rejected(self):
        mod = SpatialCrossAttention(width=3, window=8).double()
        with pytest.raises(InvalidArgumentError):
            mod(rand((1, 3, 4, 4), 0), rand((1, 3, 4, 4), 1))

    def test_non_divisible_raster_padded_and_cropped(self):
        mod = SpatialCrossAttention(width=3, window=4).double()
        perturb_parameters_(mod, seed=9, std=0.3)
        out = mod(rand((1, 3, 7, 9), 10), rand((1, 3, 7, 9), 11))
        assert out.shape == (1, 3, 7, 9)


class TestChannelCrossAttention:
    def _dense_oracle(self, mod, feat, ref):
        return dense_channel_oracle(mod, feat, ref)

    def test_ones_reference_matches_dense_oracle(self):
        mod = ChannelCrossAttention(width=8).double()
        perturb_parameters_(mod, seed=1, std=0.3)
        feat = rand((1, 8, 4, 4), 2)
        ones = torch.ones(1, 8, 4, 4, dtype=torch.float64)
        out = mod(feat, ones)
        assert np.abs(out.detach().numpy() - self._dense_oracle(mod, feat, ones)).max() < 1e-5

    def test_modulated_matches_dense_oracle(self):
        mod = ChannelCrossAttention(width=6).double()
        perturb_parameters_(mod, seed=3, std=0.3)
        feat = rand((1, 6, 5, 5), 4)
        ref = rand((1, 6, 5, 5), 5)
        out = mod(feat, ref)
        assert np.abs(out.detach().numpy() - self._dense_oracle(mod, feat, ref)).max() < 1e-5

    def test_attention_rows_sum_to_one(self):
        mod = ChannelCrossAttention(width=5).double()
        perturb_parameters_(mod, seed=6, std=0.5)
        _, attn = mod(rand((1, 5, 6, 6), 7), rand((1, 5, 6, 6), 8), return_attn=True)
        sums = attn.sum(dim=-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)


class TestScacaBlock:
    def test_zero_projections_make_identity(self):
        block = ScacaBlock(width=4, window=4).double()
        perturb_parameters_(block, seed=0, std=0.3)
        with torch.no_grad():
            for mod in (block.spatial.proj, block.channel.proj,
                        block.ffn_spatial.proj, block.ffn_channel.proj):
                mod.weight.zero_()
                mod.bias.zero_()
        feat = rand((1, 4, 8, 8), 1)
        out = block(feat, rand((1, 4, 8, 8), 2))
        assert torch.equal(out, feat)

    def test_fresh_block_is_identity(self):
        # output projections and FFN projections are zero-initialized
        block = ScacaBlock(width=4, window=4).double()
        feat = rand((1, 4, 8, 8), 3)
        assert torch.equal(block(feat, rand((1, 4, 8, 8), 4)), feat)

    def test_shape_preserved_non_divisible(self):
        block = ScacaBlock(width=3, window=4).double()
        perturb_parameters_(block, seed=5, std=0.2)
        feat = rand((1, 3, 7, 10), 6)
        assert block(feat, rand((1, 3, 7, 10), 7)).shape == feat.shape

    def test_gradient_wrt_features(self):
        block = ScacaBlock(width=4, window=4).double()
        perturb_parameters_(block, seed=8, std=0.2)
        feat = rand((1, 4, 8, 8), 9).requires_grad_(True)
        ref = rand((1, 4, 8, 8), 10)
        proj = rand((1, 4, 8, 8), 11)
        loss = (block(feat, ref) * proj).sum()
        (grad,) = torch.autograd.grad(loss, feat)
        eps = 1e-6
        for (c, i, j) in [(0, 1, 1), (1, 3, 5), (2, 6, 2), (3, 7, 7), (0, 4, 4)]:
            plus = feat.detach().clone()
            plus[0, c, i, j] += eps
            minus = feat.detach().clone()
            minus[0, c, i, j] -= eps
            with torch.no_grad():
                fd = ((block(plus, ref) * proj).sum()
                      - (block(minus, ref) * proj).sum()) / (2 * eps)
            analytic = float(grad[0, c, i, j])
            denom = max(abs(float(fd)), abs(analytic), 1e-8)
            assert abs(float(fd) - analytic) / denom < 1e-3


def test_conv_mix_block_fresh_identity_and_shape():
    block = ConvMixBlock(width=4).double()
    feat = rand((1, 4, 6, 6), 0)
    assert torch.equal(block(feat, rand((1, 4, 6, 6), 1)), feat)
    perturb_parameters_(block, seed=2, std=0.3)
    assert block(feat, rand((1, 4, 6, 6), 1)).shape == feat.shape
