"""Full fusion model: unmix -> encode -> aggregate/refine -> decode -> remix.

The upsampled LR cube is decoupled into a fixed spectral basis and an
abundance raster. A multi-scale encoder refines abundance features against
the aggregated reference feature, the decoder fuses skips through gated
fusion, and a zero-initialized head emits a residual abundance map. Mixing
that residual through the unchanged basis and adding the upsampled cube gives
the output, so a freshly built model reproduces the bicubic baseline exactly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .cfda import CFDA, ConcatFusion
from .errors import InvalidArgumentError
from .layers import FeatureStem, mark_zero_init, reset_parameters_
from .scaca import ConvMixBlock, ScacaBlock
from .scmf import SCMF
from .spectral import svd_unmix, upsample
from .types import HSICube, RGBImage

__all__ = ["ModelConfig", "FusionModel", "count_parameters", "summarize"]


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of the fusion network.

    ``rank`` is the spectral basis size, ``width`` the feature channel count,
    ``window`` the attention window, ``pe_bands`` the number of positional
    encoding frequencies and ``deform_kernel`` the deformable kernel size.
    The four ``use_*`` toggles ablate individual components; with
    ``use_unmix`` off the network runs directly in band space.
    """

    bands: int
    rank: int = 8
    width: int = 64
    scales: int = 3
    blocks_per_scale: int = 2
    window: int = 8
    omega: float = 2.0
    pe_bands: int = 4
    deform_kernel: int = 3
    scale_factor: int = 4
    ref_channels: int = 3
    flow_down: int = 4
    use_unmix: bool = True
    use_scaca: bool = True
    use_cfda: bool = True
    use_scmf: bool = True

    def __post_init__(self):
        for name in ("bands", "rank", "width", "scales", "blocks_per_scale", "window",
                     "pe_bands", "deform_kernel", "scale_factor", "ref_channels",
                     "flow_down"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise InvalidArgumentError(f"ModelConfig.{name} must be a positive integer")
        if self.rank > self.bands:
            raise InvalidArgumentError(
                f"rank ({self.rank}) must not exceed bands ({self.bands})")
        if self.omega <= 0:
            raise InvalidArgumentError("omega must be positive")
        if self.flow_down < 2 or self.flow_down & (self.flow_down - 1):
            raise InvalidArgumentError("flow_down must be a power of two >= 2")

    @property
    def abundance_channels(self) -> int:
        return self.rank if self.use_unmix else self.bands

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgumentError(f"unknown ModelConfig fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def desk(cls, bands: int, scale_factor: int = 4, **overrides) -> "ModelConfig":
        return cls(bands=bands, scale_factor=scale_factor, **overrides)

    @classmethod
    def tiny(cls, bands: int, scale_factor: int = 4, **overrides) -> "ModelConfig":
        """Small configuration for tests and desk-scale smoke runs."""
        defaults = dict(rank=4, width=16, scales=2, blocks_per_scale=1, window=4,
                        pe_bands=2)
        defaults.update(overrides)
        return cls(bands=bands, scale_factor=scale_factor, **defaults)


class FusionModel(nn.Module):
    """Residual abundance network plus the fixed-basis mixing wrapper."""

    def __init__(self, config: ModelConfig, seed: int = 0,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        width = config.width
        in_ch = config.abundance_channels
        block = ScacaBlock if config.use_scaca else ConvMixBlock

        self.stem_abund = FeatureStem(in_ch, width)
        self.stem_ref = FeatureStem(config.ref_channels, width)
        if config.use_cfda:
            self.aggregate = CFDA(width, config.deform_kernel, config.flow_down,
                                  config.omega, config.pe_bands)
        else:
            self.aggregate = ConcatFusion(width)
        self.encoder_stages = nn.ModuleList([
            nn.ModuleList([block(width, config.window)
                           for _ in range(config.blocks_per_scale)])
            for _ in range(config.scales)])
        self.down_convs = nn.ModuleList([
            nn.Conv2d(width, width, 3, stride=2, padding=1)
            for _ in range(config.scales - 1)])
        self.up_convs = nn.ModuleList([
            nn.Conv2d(width, width, 3, padding=1)
            for _ in range(config.scales - 1)])
        if config.use_scmf:
            self.fusers = nn.ModuleList([SCMF(width) for _ in range(config.scales - 1)])
        else:
            self.fusers = None
        self.decoder_stages = nn.ModuleList([
            nn.ModuleList([block(width, config.window)
                           for _ in range(config.blocks_per_scale)])
            for _ in range(config.scales - 1)])
        self.head = mark_zero_init(nn.Conv2d(width, in_ch, 3, padding=1))

        reset_parameters_(self, seed)
        self.to(dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.head.weight.dtype

    def forward_tensors(self, abund: Tensor, ref: Tensor) -> Tensor:
        """Residual abundance map from abundance and reference tensors (NCHW)."""
        if abund.shape[1] != self.config.abundance_channels:
            raise InvalidArgumentError(
                f"expected {self.config.abundance_channels} abundance channels, "
                f"got {abund.shape[1]}")
        if ref.shape[1] != self.config.ref_channels:
            raise InvalidArgumentError(
                f"expected {self.config.ref_channels} reference channels, got {ref.shape[1]}")
        if abund.shape[0] != ref.shape[0] or abund.shape[2:] != ref.shape[2:]:
            raise InvalidArgumentError(
                f"abundance {tuple(abund.shape)} and reference {tuple(ref.shape)} "
                "must share batch and spatial size")
        feat = self.stem_abund(abund)
        ref_feat = self.stem_ref(ref)
        agg = self.aggregate(feat, ref_feat)

        refs = [agg]
        for _ in range(1, self.config.scales):
            prev = refs[-1]
            refs.append(F.adaptive_avg_pool2d(
                prev, ((prev.shape[2] + 1) // 2, (prev.shape[3] + 1) // 2)))

        x = feat
        skips = []
        for s in range(self.config.scales):
            for blk in self.encoder_stages[s]:
                x = blk(x, refs[s])
            if s < self.config.scales - 1:
                skips.append(x)
                x = self.down_convs[s](x)
        for i, s in enumerate(range(self.config.scales - 2, -1, -1)):
            skip = skips[s]
            x = F.interpolate(x, size=skip.shape[2:], mode="nearest")
            x = self.up_convs[i](x)
            x = self.fusers[i](skip, x) if self.fusers is not None else x + skip
            for blk in self.decoder_stages[i]:
                x = blk(x, refs[s])
        return self.head(x)

    def forward(self, abund: Tensor, ref: Tensor, basis: Tensor, x_up: Tensor) -> Tensor:
        """Super-resolved cube tensor (n, bands, h, w); differentiable.

        ``basis`` is (bands, rank) shared across the batch or (n, bands, rank)
        per item.
        """
        residual = self.forward_tensors(abund, ref)
        n, k, h, w = residual.shape
        bands = x_up.shape[1]
        if basis.shape not in ((bands, k), (n, bands, k)):
            raise InvalidArgumentError(
                f"basis shape {tuple(basis.shape)} incompatible with residual rank {k} "
                f"and {bands} bands")
        y_res = (basis @ residual.reshape(n, k, h * w)).reshape(n, bands, h, w)
        return y_res + x_up

    def prepare_inputs(self, x_lr: HSICube, i_ref: RGBImage):
        """Upsample + unmix an LR cube and convert everything to model tensors.

        Returns ``(abund, ref, basis, x_up)`` torch tensors plus the numpy
        upsampled cube (the bicubic baseline).
        """
        cfg = self.config
        if x_lr.bands != cfg.bands:
            raise InvalidArgumentError(
                f"model expects {cfg.bands} bands, cube has {x_lr.bands}")
        if i_ref.channels != cfg.ref_channels:
            raise InvalidArgumentError(
                f"model expects {cfg.ref_channels} reference channels, got {i_ref.channels}")
        if (i_ref.height != x_lr.height * cfg.scale_factor
                or i_ref.width != x_lr.width * cfg.scale_factor):
            raise InvalidArgumentError(
                f"reference size {i_ref.height}x{i_ref.width} must be the LR size "
                f"{x_lr.height}x{x_lr.width} times the scale factor {cfg.scale_factor}")
        x_up = upsample(x_lr, cfg.scale_factor)
        if cfg.use_unmix:
            basis, abund, _ = svd_unmix(x_up, cfg.rank)
            basis_np = basis.e
            abund_np = abund.data
        else:
            basis_np = np.eye(cfg.bands)
            abund_np = x_up.data
        to = dict(dtype=self.dtype)
        abund_t = torch.from_numpy(np.ascontiguousarray(
            abund_np.transpose(2, 0, 1))[None]).to(**to)
        ref_t = torch.from_numpy(np.ascontiguousarray(
            i_ref.data.transpose(2, 0, 1))[None]).to(**to)
        basis_t = torch.from_numpy(np.ascontiguousarray(basis_np)).to(**to)
        x_up_t = torch.from_numpy(np.ascontiguousarray(
            x_up.data.transpose(2, 0, 1))[None]).to(**to)
        return abund_t, ref_t, basis_t, x_up_t, x_up

    def super_resolve(self, x_lr: HSICube, i_ref: RGBImage, clamp: bool = False) -> HSICube:
        """End-to-end inference on rasters; clamping is for export only.

        The residual is added to the float64 bicubic base outside the torch
        graph, so a zero residual reproduces the upsampled cube bit-exactly.
        """
        abund_t, ref_t, basis_t, _, x_up = self.prepare_inputs(x_lr, i_ref)
        with torch.no_grad():
            residual = self.forward_tensors(abund_t, ref_t)
            n, k, h, w = residual.shape
            y_res = (basis_t @ residual.reshape(n, k, h * w)).reshape(
                n, self.config.bands, h, w)
        out = x_up.data + y_res[0].permute(1, 2, 0).cpu().numpy().astype(np.float64)
        if clamp:
            out = np.clip(out, 0.0, 1.0)
        return HSICube(out)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def _conv_macs(module: nn.Conv2d, out_shape) -> int:
    out_elems = int(np.prod(out_shape))
    return out_elems * (module.in_channels // module.groups) * \
        module.kernel_size[0] * module.kernel_size[1]


def summarize(config: ModelConfig, lr_height: int = 32, lr_width: int = 32) -> dict:
    """Parameter counts and an analytic multiply-accumulate estimate.

    The estimate covers the torch network only (convolutions, linears,
    attention and deformable gathers) for one forward pass at the given LR
    size; it is informational and deterministic.
    """
    from .cfda import CFDA as _CFDA
    from .scaca import ChannelCrossAttention, SpatialCrossAttention

    model = FusionModel(config, seed=0)
    h, w = lr_height * config.scale_factor, lr_width * config.scale_factor
    macs = {"total": 0}

    def hook(module, inputs, output):
        if isinstance(module, nn.Conv2d):
            macs["total"] += _conv_macs(module, output.shape)
        elif isinstance(module, nn.Linear):
            macs["total"] += int(np.prod(output.shape)) * module.in_features
        elif isinstance(module, SpatialCrossAttention):
            n, c, hh, ww = inputs[0].shape
            win = module.window
            hp = math.ceil(hh / win) * win
            wp = math.ceil(ww / win) * win
            n_tokens = win * win
            n_windows = n * (hp // win) * (wp // win)
            macs["total"] += 2 * n_windows * n_tokens * n_tokens * c
        elif isinstance(module, ChannelCrossAttention):
            n, c, hh, ww = inputs[0].shape
            macs["total"] += 2 * n * c * c * hh * ww
        elif isinstance(module, _CFDA):
            n, c, hh, ww = inputs[0].shape
            taps = config.deform_kernel ** 2
            # bilinear gathers (4 corner mults + mask) plus the tap-wise mix
            macs["total"] += n * taps * hh * ww * c * 5
            macs["total"] += n * taps * hh * ww * c * c

    handles = [m.register_forward_hook(hook) for m in model.modules()]
    try:
        with torch.no_grad():
            abund = torch.zeros(1, config.abundance_channels, h, w)
            ref = torch.zeros(1, config.ref_channels, h, w)
            model.forward_tensors(abund, ref)
    finally:
        for hd in handles:
            hd.remove()

    conv_params = sum(p.numel() for m in model.modules() if isinstance(m, nn.Conv2d)
                      for p in m.parameters(recurse=False))
    return {
        "parameters": count_parameters(model),
        "conv_parameters": int(conv_params),
        "macs": int(macs["total"]),
        "lr_size": [lr_height, lr_width],
        "hr_size": [h, w],
    }
