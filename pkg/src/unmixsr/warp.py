"""Differentiable bilinear sampling, warping and sub-pixel positional encoding.

Tensor conventions (torch, NCHW):
  feature map   (n, c, h, w)
  flow field    (n, 2, h, w), channel 0 = dx (width axis), channel 1 = dy
  similarity    (n, 1, h, w), values in (0, 1)
  encoding      (n, 4 * n_bands, h, w), channel blocks
                [sin(x freqs), sin(y freqs), cos(x freqs), cos(y freqs)]
"""

from __future__ import annotations

import torch
from torch import Tensor

from .errors import InvalidArgumentError

__all__ = ["bilinear_sample", "bilinear_warp", "bilinear_resize",
           "fractional_flow", "positional_encode"]


def bilinear_sample(feat: Tensor, x: Tensor, y: Tensor) -> Tensor:
    """Sample ``feat`` (n, c, h, w) at float pixel coordinates with border
    replication. ``x``/``y`` are (n, h', w'); output is (n, c, h', w').

    Differentiable w.r.t. both the features and the coordinates (coordinates
    clamped outside the raster contribute zero gradient, matching replication).
    """
    if feat.dim() != 4 or x.dim() != 3 or y.dim() != 3:
        raise InvalidArgumentError("bilinear_sample expects feat (n,c,h,w) and coords (n,h',w')")
    if x.shape != y.shape or x.shape[0] != feat.shape[0]:
        raise InvalidArgumentError("coordinate shapes must match and share the batch size")
    n, c, h, w = feat.shape
    xc = x.clamp(0.0, w - 1.0)
    yc = y.clamp(0.0, h - 1.0)
    # NaN coordinates: keep indices valid, let the NaN weights poison the output
    x0 = torch.nan_to_num(xc, nan=0.0).floor()
    y0 = torch.nan_to_num(yc, nan=0.0).floor()
    fx = (xc - x0).unsqueeze(1)
    fy = (yc - y0).unsqueeze(1)
    x0i = x0.long()
    y0i = y0.long()
    x1i = (x0i + 1).clamp(max=w - 1)
    y1i = (y0i + 1).clamp(max=h - 1)

    flat = feat.reshape(n, c, h * w)
    out_hw = x.shape[1] * x.shape[2]

    def gather(yi: Tensor, xi: Tensor) -> Tensor:
        idx = (yi * w + xi).reshape(n, 1, out_hw).expand(n, c, out_hw)
        return torch.gather(flat, 2, idx).reshape(n, c, x.shape[1], x.shape[2])

    v00 = gather(y0i, x0i)
    v01 = gather(y0i, x1i)
    v10 = gather(y1i, x0i)
    v11 = gather(y1i, x1i)
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy


def _base_grid(n: int, h: int, w: int, ref: Tensor) -> tuple[Tensor, Tensor]:
    ys = torch.arange(h, dtype=ref.dtype, device=ref.device)
    xs = torch.arange(w, dtype=ref.dtype, device=ref.device)
    yy, xx = torch.meshgrid(ys, xs, indexing="ij")
    return (xx.unsqueeze(0).expand(n, h, w), yy.unsqueeze(0).expand(n, h, w))


def bilinear_warp(feat: Tensor, flow: Tensor) -> Tensor:
    """Warp ``feat`` by sampling at ``p + flow(p)`` per pixel."""
    if feat.dim() != 4 or flow.dim() != 4 or flow.shape[1] != 2:
        raise InvalidArgumentError("bilinear_warp expects feat (n,c,h,w) and flow (n,2,h,w)")
    if feat.shape[0] != flow.shape[0] or feat.shape[2:] != flow.shape[2:]:
        raise InvalidArgumentError(
            f"feature {tuple(feat.shape)} and flow {tuple(flow.shape)} shapes do not match")
    n, _, h, w = feat.shape
    xx, yy = _base_grid(n, h, w, feat)
    return bilinear_sample(feat, xx + flow[:, 0], yy + flow[:, 1])


def bilinear_resize(t: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize with half-pixel alignment and replicated borders."""
    if t.dim() != 4:
        raise InvalidArgumentError("bilinear_resize expects (n,c,h,w)")
    if out_h < 1 or out_w < 1:
        raise InvalidArgumentError("output size must be positive")
    n, _, h, w = t.shape
    ys = (torch.arange(out_h, dtype=t.dtype, device=t.device) + 0.5) * (h / out_h) - 0.5
    xs = (torch.arange(out_w, dtype=t.dtype, device=t.device) + 0.5) * (w / out_w) - 0.5
    yy, xx = torch.meshgrid(ys, xs, indexing="ij")
    return bilinear_sample(t, xx.unsqueeze(0).expand(n, out_h, out_w),
                           yy.unsqueeze(0).expand(n, out_h, out_w))


def fractional_flow(flow: Tensor) -> Tensor:
    """Decimal component ``flow - floor(flow)``, in [0, 1) for any sign.

    For tiny negative inputs the subtraction rounds to 1.0; those are clamped
    to the largest representable value below 1 to keep the half-open range.
    """
    one_below = torch.nextafter(torch.ones((), dtype=flow.dtype),
                                torch.zeros((), dtype=flow.dtype))
    return (flow - flow.floor()).clamp(max=one_below)


def positional_encode(frac: Tensor, omega: float, n_bands: int) -> Tensor:
    """Sine/cosine encoding of sub-pixel displacement at geometric frequencies.

    Each of the two flow components is scaled by ``omega ** i`` for
    i = 1..n_bands, then passed through sin and cos, giving ``4 * n_bands``
    channels bounded in [-1, 1].
    """
    if frac.dim() != 4 or frac.shape[1] != 2:
        raise InvalidArgumentError("positional_encode expects a (n,2,h,w) flow fraction")
    if not isinstance(n_bands, (int,)) or n_bands < 1:
        raise InvalidArgumentError(f"n_bands must be a positive integer, got {n_bands!r}")
    if omega <= 0:
        raise InvalidArgumentError(f"omega must be positive, got {omega!r}")
    n, _, h, w = frac.shape
    freqs = torch.tensor([omega ** i for i in range(1, n_bands + 1)],
                         dtype=frac.dtype, device=frac.device)
    gamma = frac.unsqueeze(2) * freqs.view(1, 1, n_bands, 1, 1)
    gamma = gamma.reshape(n, 2 * n_bands, h, w)
    return torch.cat([torch.sin(gamma), torch.cos(gamma)], dim=1)
