"""Spatial-channel cross-attention refinement of abundance features.

The aggregated reference feature first gates itself through a depth-wise
sigmoid branch. Abundance features are then refined by window-based spatial
attention whose values are modulated by the reference window, followed by
transposed (channel-by-channel) attention modulated the same way. Both
branches follow the pre-norm residual pattern ``x + FFN(attend(LN(x), ref))``.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import InvalidArgumentError
from .layers import ConvFFN, LayerNorm2d, mark_zero_init

__all__ = ["window_partition", "window_merge", "pad_to_multiple", "SelfModulate",
           "RelativePositionBias", "SpatialCrossAttention", "ChannelCrossAttention",
           "ScacaBlock", "ConvMixBlock"]


def pad_to_multiple(x: Tensor, multiple: int) -> Tensor:
    """Replicate-pad the bottom/right so H and W divide ``multiple``."""
    h, w = x.shape[2:]
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph == 0 and pw == 0:
        return x
    return F.pad(x, (0, pw, 0, ph), mode="replicate")


def window_partition(x: Tensor, window: int) -> Tensor:
    """(n, c, h, w) -> (n * nh * nw, window * window, c) token windows."""
    n, c, h, w = x.shape
    if h % window or w % window:
        raise InvalidArgumentError(
            f"window {window} must divide the raster size {h}x{w}")
    x = x.reshape(n, c, h // window, window, w // window, window)
    x = x.permute(0, 2, 4, 3, 5, 1)
    return x.reshape(-1, window * window, c)


def window_merge(tokens: Tensor, window: int, n: int, h: int, w: int) -> Tensor:
    """Inverse of :func:`window_partition` (bit-exact round trip)."""
    c = tokens.shape[2]
    x = tokens.reshape(n, h // window, w // window, window, window, c)
    x = x.permute(0, 5, 1, 3, 2, 4)
    return x.reshape(n, c, h, w)


class SelfModulate(nn.Module):
    """Reference self-gating: ``x + x * sigmoid(dwconv5x5(x))``."""

    def __init__(self, width: int):
        super().__init__()
        self.gate = nn.Conv2d(width, width, 5, padding=2, groups=width)

    def forward(self, x: Tensor) -> Tensor:
        return x + x * torch.sigmoid(self.gate(x))


class RelativePositionBias(nn.Module):
    """Learnable bias over relative token offsets inside one window."""

    def __init__(self, window: int):
        super().__init__()
        self.window = window
        self.table = nn.Parameter(torch.zeros((2 * window - 1) ** 2))
        coords = torch.stack(torch.meshgrid(torch.arange(window), torch.arange(window),
                                            indexing="ij")).flatten(1)
        rel = coords[:, :, None] - coords[:, None, :]
        rel = rel.permute(1, 2, 0).contiguous()
        rel[..., 0] += window - 1
        rel[..., 1] += window - 1
        rel[..., 0] *= 2 * window - 1
        self.register_buffer("index", rel.sum(-1))

    def forward(self) -> Tensor:
        n = self.window * self.window
        return self.table[self.index.reshape(-1)].reshape(n, n)


class SpatialCrossAttention(nn.Module):
    """Window attention over abundance tokens with reference-modulated values."""

    def __init__(self, width: int, window: int):
        super().__init__()
        self.width = width
        self.window = window
        self.scale = width ** -0.5
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = mark_zero_init(nn.Linear(width, width))
        self.bias = RelativePositionBias(window)

    def forward(self, feat: Tensor, ref: Tensor,
                return_attn: bool = False):
        if feat.shape != ref.shape:
            raise InvalidArgumentError(
                f"feature {tuple(feat.shape)} and reference {tuple(ref.shape)} differ")
        n, c, h, w = feat.shape
        if self.window > h or self.window > w:
            raise InvalidArgumentError(
                f"window {self.window} larger than the {h}x{w} feature raster "
                "(padding only trims the partition remainder)")
        fp = pad_to_multiple(feat, self.window)
        rp = pad_to_multiple(ref, self.window)
        hp, wp = fp.shape[2:]
        tokens = window_partition(fp, self.window)
        ref_tokens = window_partition(rp, self.window)
        q, k, v = self.qkv(tokens).chunk(3, dim=-1)
        v_mod = v * ref_tokens
        attn = torch.softmax(q @ k.transpose(1, 2) * self.scale + self.bias(), dim=-1)
        out = self.proj(attn @ v_mod)
        out = window_merge(out, self.window, n, hp, wp)[:, :, :h, :w]
        if return_attn:
            return out, attn
        return out


class ChannelCrossAttention(nn.Module):
    """Transposed attention across channels with reference-modulated values."""

    def __init__(self, width: int):
        super().__init__()
        self.scale = width ** -0.5
        self.q = nn.Conv2d(width, width, 1)
        self.k = nn.Conv2d(width, width, 1)
        self.v = nn.Conv2d(width, width, 1)
        self.proj = mark_zero_init(nn.Conv2d(width, width, 1))

    def forward(self, feat: Tensor, ref: Tensor, return_attn: bool = False):
        if feat.shape != ref.shape:
            raise InvalidArgumentError(
                f"feature {tuple(feat.shape)} and reference {tuple(ref.shape)} differ")
        n, c, h, w = feat.shape
        q = self.q(feat).reshape(n, c, h * w)
        k = self.k(feat).reshape(n, c, h * w)
        v = self.v(feat).reshape(n, c, h * w) * ref.reshape(n, c, h * w)
        attn = torch.softmax(q @ k.transpose(1, 2) * self.scale, dim=-1)
        out = self.proj((attn @ v).reshape(n, c, h, w))
        if return_attn:
            return out, attn
        return out


class ScacaBlock(nn.Module):
    """Self-modulated reference + sequential spatial and channel cross-attention."""

    def __init__(self, width: int, window: int):
        super().__init__()
        self.modulate = SelfModulate(width)
        self.norm_spatial = LayerNorm2d(width)
        self.spatial = SpatialCrossAttention(width, window)
        self.ffn_spatial = ConvFFN(width)
        self.norm_channel = LayerNorm2d(width)
        self.channel = ChannelCrossAttention(width)
        self.ffn_channel = ConvFFN(width)

    def forward(self, feat: Tensor, ref: Tensor) -> Tensor:
        ref_mod = self.modulate(ref)
        feat = feat + self.ffn_spatial(self.spatial(self.norm_spatial(feat), ref_mod))
        feat = feat + self.ffn_channel(self.channel(self.norm_channel(feat), ref_mod))
        return feat


class ConvMixBlock(nn.Module):
    """Ablation fallback: plain convolutions over the concatenated pair."""

    def __init__(self, width: int, window: int = 0):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(2 * width, width, 3, padding=1),
            nn.GELU(),
            mark_zero_init(nn.Conv2d(width, width, 3, padding=1)),
        )

    def forward(self, feat: Tensor, ref: Tensor) -> Tensor:
        return feat + self.body(torch.cat([feat, ref], dim=1))
