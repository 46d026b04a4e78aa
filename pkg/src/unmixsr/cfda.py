"""Coarse-to-fine deformable aggregation of unregistered reference features.

A pooled-feature predictor estimates a coarse per-pixel flow, a refinement
convolution adds a residual flow and a confidence (similarity) map, and a
sub-pixel stage turns the flow fraction's frequency encoding into per-sample
offsets and modulation masks for a modulated deformable convolution over the
reference features.

Offset tensor layout: channels ``2j`` / ``2j + 1`` hold the (dx, dy) pair for
kernel tap ``j`` in row-major tap order; masks carry one channel per tap.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import InvalidArgumentError
from .layers import mark_zero_init
from .warp import bilinear_resize, bilinear_sample, bilinear_warp, fractional_flow, \
    positional_encode

__all__ = ["DeformParams", "CoarseFlowPredictor", "FlowSimilarityRefiner",
           "SubpixelRefiner", "modulated_deform_conv", "CFDA", "ConcatFusion"]


class DeformParams(NamedTuple):
    """Per-pixel deformable sampling parameters.

    offsets: (n, 2*k*k, h, w), bounded within 1 px of the broadcast flow
    masks:   (n, k*k, h, w), strictly in (0, 1)
    offset_residual / mask_residual: raw pre-activation residuals
    """

    offsets: Tensor
    masks: Tensor
    offset_residual: Tensor
    mask_residual: Tensor


class CoarseFlowPredictor(nn.Module):
    """Pooled-feature flow estimate, upsampled back to full resolution."""

    def __init__(self, width: int, down: int = 4):
        super().__init__()
        if down < 2 or down & (down - 1):
            raise InvalidArgumentError(f"down must be a power of two >= 2, got {down}")
        self.down = down
        self.predict = mark_zero_init(nn.Conv2d(2 * width, 2, 3, padding=1))

    def forward(self, feat: Tensor, feat_ref: Tensor) -> Tensor:
        if feat.shape != feat_ref.shape:
            raise InvalidArgumentError(
                f"feature shapes differ: {tuple(feat.shape)} vs {tuple(feat_ref.shape)}")
        h, w = feat.shape[2:]
        if h % self.down or w % self.down:
            raise InvalidArgumentError(
                f"spatial size {h}x{w} must be divisible by the pyramid factor {self.down}")
        pooled = F.avg_pool2d(torch.cat([feat, feat_ref], dim=1), self.down)
        coarse = self.predict(pooled)
        return bilinear_resize(coarse, h, w)


class FlowSimilarityRefiner(nn.Module):
    """Residual flow and similarity from the target + coarsely warped reference."""

    def __init__(self, width: int):
        super().__init__()
        self.refine = mark_zero_init(nn.Conv2d(2 * width, 3, 3, padding=1))

    def forward(self, feat: Tensor, feat_ref: Tensor,
                coarse_flow: Tensor) -> tuple[Tensor, Tensor]:
        if feat.shape != feat_ref.shape:
            raise InvalidArgumentError(
                f"feature shapes differ: {tuple(feat.shape)} vs {tuple(feat_ref.shape)}")
        warped = bilinear_warp(feat_ref, coarse_flow)
        out = self.refine(torch.cat([feat, warped], dim=1))
        flow = coarse_flow + out[:, :2]
        similarity = torch.sigmoid(out[:, 2:3])
        return flow, similarity


class SubpixelRefiner(nn.Module):
    """Turn flow, similarity and sub-pixel encoding into offsets and masks.

    Offsets are the flow broadcast to every kernel tap plus a tanh-bounded
    residual; masks are ``sigmoid(similarity * residual)`` per tap.
    """

    def __init__(self, width: int, kernel_size: int = 3, omega: float = 2.0,
                 n_bands: int = 4):
        super().__init__()
        self.kernel_size = kernel_size
        self.omega = omega
        self.n_bands = n_bands
        taps = kernel_size * kernel_size
        self.body = nn.Sequential(
            nn.Conv2d(2 * width + 4 * n_bands, width, 3, padding=1),
            nn.LeakyReLU(0.1),
            mark_zero_init(nn.Conv2d(width, 3 * taps, 3, padding=1)),
        )

    def forward(self, feat: Tensor, feat_ref: Tensor, flow: Tensor,
                similarity: Tensor) -> DeformParams:
        taps = self.kernel_size * self.kernel_size
        encoding = positional_encode(fractional_flow(flow), self.omega, self.n_bands)
        warped = bilinear_warp(feat_ref, flow)
        residual = self.body(torch.cat([feat, warped, encoding], dim=1))
        offset_residual = residual[:, :2 * taps]
        mask_residual = residual[:, 2 * taps:]
        # broadcast the 2-channel flow onto every (dx, dy) tap pair
        n, _, h, w = flow.shape
        broadcast = flow.unsqueeze(1).expand(n, taps, 2, h, w).reshape(n, 2 * taps, h, w)
        offsets = broadcast + torch.tanh(offset_residual)
        masks = torch.sigmoid(similarity * mask_residual)
        return DeformParams(offsets, masks, offset_residual, mask_residual)


def modulated_deform_conv(feat: Tensor, offsets: Tensor, masks: Tensor,
                          weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Modulated deformable convolution via per-tap bilinear gathers.

    out(p) = bias + sum_j W[:, :, j] @ (mask_j(p) * feat(p + grid_j + offset_j(p)))

    ``weight`` is (c_out, c_in, k, k); taps are enumerated row-major and the
    fixed grid is centered, so zero offsets with unit masks reduce to a
    standard convolution with replicated borders. Differentiable w.r.t. the
    features, offsets, masks and weights.
    """
    if feat.dim() != 4 or offsets.dim() != 4 or masks.dim() != 4:
        raise InvalidArgumentError("modulated_deform_conv expects 4-D tensors")
    c_out, c_in, kh, kw = weight.shape
    if kh != kw:
        raise InvalidArgumentError("only square kernels are supported")
    taps = kh * kw
    if feat.shape[1] != c_in:
        raise InvalidArgumentError(
            f"feature channels {feat.shape[1]} do not match weight input channels {c_in}")
    if offsets.shape[1] != 2 * taps or masks.shape[1] != taps:
        raise InvalidArgumentError(
            f"expected {2 * taps} offset and {taps} mask channels, got "
            f"{offsets.shape[1]} and {masks.shape[1]}")
    if offsets.shape[2:] != feat.shape[2:] or masks.shape[2:] != feat.shape[2:]:
        raise InvalidArgumentError("offset/mask rasters must match the feature raster")
    n, _, h, w = feat.shape
    ys = torch.arange(h, dtype=feat.dtype, device=feat.device)
    xs = torch.arange(w, dtype=feat.dtype, device=feat.device)
    yy, xx = torch.meshgrid(ys, xs, indexing="ij")
    xx = xx.unsqueeze(0)
    yy = yy.unsqueeze(0)
    center = (kh - 1) / 2.0
    out = torch.zeros(n, c_out, h, w, dtype=feat.dtype, device=feat.device)
    for j in range(taps):
        gy = j // kw - center
        gx = j % kw - center
        sx = xx + gx + offsets[:, 2 * j]
        sy = yy + gy + offsets[:, 2 * j + 1]
        sampled = bilinear_sample(feat, sx, sy) * masks[:, j:j + 1]
        out = out + torch.einsum("nchw,oc->nohw", sampled, weight[:, :, j // kw, j % kw])
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out


class CFDA(nn.Module):
    """Full coarse-to-fine deformable aggregation block."""

    def __init__(self, width: int, kernel_size: int = 3, down: int = 4,
                 omega: float = 2.0, n_bands: int = 4):
        super().__init__()
        self.coarse = CoarseFlowPredictor(width, down)
        self.refiner = FlowSimilarityRefiner(width)
        self.subpixel = SubpixelRefiner(width, kernel_size, omega, n_bands)
        self.aggregate = nn.Conv2d(width, width, kernel_size,
                                   padding=kernel_size // 2)

    def flow_similarity(self, feat: Tensor, feat_ref: Tensor) -> tuple[Tensor, Tensor]:
        coarse = self.coarse(feat, feat_ref)
        return self.refiner(feat, feat_ref, coarse)

    def forward(self, feat: Tensor, feat_ref: Tensor) -> Tensor:
        flow, similarity = self.flow_similarity(feat, feat_ref)
        params = self.subpixel(feat, feat_ref, flow, similarity)
        return modulated_deform_conv(feat_ref, params.offsets, params.masks,
                                     self.aggregate.weight, self.aggregate.bias)


class ConcatFusion(nn.Module):
    """Aggregation fallback when the deformable path is ablated: the reference
    feature is fused by plain concatenation and one convolution."""

    def __init__(self, width: int):
        super().__init__()
        self.fuse = nn.Conv2d(2 * width, width, 3, padding=1)

    def forward(self, feat: Tensor, feat_ref: Tensor) -> Tensor:
        if feat.shape != feat_ref.shape:
            raise InvalidArgumentError(
                f"feature shapes differ: {tuple(feat.shape)} vs {tuple(feat_ref.shape)}")
        return self.fuse(torch.cat([feat, feat_ref], dim=1))
