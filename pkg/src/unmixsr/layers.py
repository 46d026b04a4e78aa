"""Shared building blocks and deterministic parameter initialization."""

from __future__ import annotations

import math

import torch
from torch import Tensor, nn

__all__ = ["mark_zero_init", "is_zero_init", "LayerNorm2d", "FeatureStem",
           "ConvFFN", "reset_parameters_", "perturb_parameters_"]


def mark_zero_init(module: nn.Module) -> nn.Module:
    """Zero a conv/linear now and tag it so :func:`reset_parameters_` keeps it zero.

    Used for gate, flow and offset predictors and for residual-branch output
    projections, so a fresh model starts at (or near) the identity residual.
    """
    module._zero_init = True
    with torch.no_grad():
        module.weight.zero_()
        if module.bias is not None:
            module.bias.zero_()
    return module


def is_zero_init(module: nn.Module) -> bool:
    return getattr(module, "_zero_init", False)


class LayerNorm2d(nn.Module):
    """LayerNorm over the channel dimension of an NCHW tensor."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(var + self.eps)
        return x * self.weight.view(1, -1, 1, 1) + self.bias.view(1, -1, 1, 1)


class FeatureStem(nn.Module):
    """Three 3x3 convolutions lifting an input raster to the working width."""

    def __init__(self, in_channels: int, width: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, width, 3, padding=1),
            nn.LeakyReLU(0.1),
            nn.Conv2d(width, width, 3, padding=1),
            nn.LeakyReLU(0.1),
            nn.Conv2d(width, width, 3, padding=1),
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.body(x)


class ConvFFN(nn.Module):
    """Pointwise-in, depthwise 3x3, pointwise-out feed-forward with GELU.

    The output projection is zero-initialized so the surrounding residual
    branch starts as the identity.
    """

    def __init__(self, width: int, expansion: int = 2):
        super().__init__()
        hidden = width * expansion
        self.inner = nn.Sequential(
            nn.Conv2d(width, hidden, 1),
            nn.GELU(),
            nn.Conv2d(hidden, hidden, 3, padding=1, groups=hidden),
            nn.GELU(),
        )
        self.proj = mark_zero_init(nn.Conv2d(hidden, width, 1))

    def forward(self, x: Tensor) -> Tensor:
        return self.proj(self.inner(x))


def _kaiming_uniform_(weight: Tensor, gen: torch.Generator) -> None:
    # fan_in scaling matching nn.Conv2d's default (a = sqrt(5)): bound = 1/sqrt(fan_in)
    fan_in = weight.shape[1] * (weight[0][0].numel() if weight.dim() > 2 else 1)
    bound = 1.0 / math.sqrt(fan_in) if fan_in > 0 else 0.0
    weight.uniform_(-bound, bound, generator=gen)


def reset_parameters_(model: nn.Module, seed: int) -> None:
    """Deterministic re-initialization of every parameter from one seed.

    Convolutions and linear layers get Kaiming-uniform weights and uniform
    biases unless marked via :func:`mark_zero_init` (then both are zeroed);
    norms get identity affines; other parameter tensors (bias tables) get
    small seeded normals. Module traversal order is the registration order,
    so identical seeds yield bit-identical parameters.
    """
    gen = torch.Generator().manual_seed(seed)
    handled = set()
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, (nn.Conv2d, nn.Linear)):
                if is_zero_init(module):
                    module.weight.zero_()
                    if module.bias is not None:
                        module.bias.zero_()
                else:
                    _kaiming_uniform_(module.weight, gen)
                    if module.bias is not None:
                        fan_in = module.weight.shape[1] * (
                            module.weight[0][0].numel() if module.weight.dim() > 2 else 1)
                        bound = 1.0 / math.sqrt(fan_in) if fan_in > 0 else 0.0
                        module.bias.uniform_(-bound, bound, generator=gen)
                handled.update(id(p) for p in module.parameters(recurse=False))
            elif isinstance(module, LayerNorm2d):
                module.weight.fill_(1.0)
                module.bias.zero_()
                handled.update(id(p) for p in module.parameters(recurse=False))
        for param in model.parameters():
            if id(param) not in handled:
                param.normal_(0.0, 0.02, generator=gen)


def perturb_parameters_(model: nn.Module, seed: int, std: float = 0.1) -> None:
    """Add seeded Gaussian noise to every parameter (gradient-check helper:
    zero-initialized branches block gradient flow until perturbed)."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for param in model.parameters():
            param.add_(torch.empty_like(param).normal_(0.0, std, generator=gen))
