"""Gated fusion of encoder skip features into decoder features.

The concatenated pair feeds two parallel branches: a spatial branch whose
depth-wise value stack is gated by a one-channel sigmoid map, and a channel
branch whose pointwise values are gated by a pooled per-channel sigmoid
vector. Their sum is added to the decoder feature as a residual.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import InvalidArgumentError
from .layers import mark_zero_init

__all__ = ["SpatialModulation", "ChannelModulation", "SCMF"]


class SpatialModulation(nn.Module):
    """Depth-wise value stack scaled by a per-pixel gate in (0, 1)."""

    def __init__(self, width: int):
        super().__init__()
        self.value = nn.Sequential(
            nn.Conv2d(2 * width, 2 * width, 3, padding=1, groups=2 * width),
            nn.LeakyReLU(0.1),
            nn.Conv2d(2 * width, 2 * width, 3, padding=1, groups=2 * width),
            nn.LeakyReLU(0.1),
            nn.Conv2d(2 * width, width, 1),
        )
        self.gate = mark_zero_init(nn.Conv2d(2 * width, 1, 3, padding=1))

    def forward(self, cat: Tensor, return_gate: bool = False):
        gate = torch.sigmoid(self.gate(cat))
        out = self.value(cat) * gate
        if return_gate:
            return out, gate
        return out


class ChannelModulation(nn.Module):
    """Pointwise values scaled by a pooled per-channel gate in (0, 1)."""

    def __init__(self, width: int):
        super().__init__()
        self.value = nn.Conv2d(2 * width, width, 1)
        self.gate = mark_zero_init(nn.Conv2d(2 * width, width, 1))

    def forward(self, cat: Tensor, return_gate: bool = False):
        pooled = F.adaptive_avg_pool2d(cat, 1)
        gate = torch.sigmoid(self.gate(pooled))
        out = self.value(cat) * gate
        if return_gate:
            return out, gate
        return out


class SCMF(nn.Module):
    """Spatial + channel modulated skip fusion with a decoder residual."""

    def __init__(self, width: int):
        super().__init__()
        self.spatial = SpatialModulation(width)
        self.channel = ChannelModulation(width)

    def forward(self, enc: Tensor, dec: Tensor) -> Tensor:
        if enc.shape != dec.shape:
            raise InvalidArgumentError(
                f"encoder {tuple(enc.shape)} and decoder {tuple(dec.shape)} shapes differ")
        cat = torch.cat([enc, dec], dim=1)
        return self.spatial(cat) + self.channel(cat) + dec
