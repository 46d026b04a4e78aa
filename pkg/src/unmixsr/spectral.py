"""Spectral decoupling of an upsampled HSI into endmembers and abundances.

The cube is matricized to (bands, pixels), factored with an economy SVD, and
the leading left singular vectors become the spectral basis. The basis is
kept fixed; only abundances are learned downstream, and a residual cube is
recovered by mixing refined abundances back through the same basis.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError
from .types import AbundanceMap, EndmemberMatrix, HSICube, SVDFactors

__all__ = ["upsample", "svd_unmix", "mix", "reconstruct", "bicubic_weights"]


def bicubic_weights(t: np.ndarray) -> np.ndarray:
    """Catmull-Rom cubic kernel (a = -0.5) evaluated at distances ``t``."""
    a = -0.5
    t = np.abs(t)
    w = np.where(
        t <= 1.0,
        (a + 2.0) * t ** 3 - (a + 3.0) * t ** 2 + 1.0,
        np.where(t < 2.0, a * (t ** 3 - 5.0 * t ** 2 + 8.0 * t - 4.0), 0.0),
    )
    return w


def _axis_weights(n_in: int, factor: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-output-pixel source indices (clamped) and kernel weights for one axis."""
    out = np.arange(n_in * factor, dtype=np.float64)
    src = (out + 0.5) / factor - 0.5
    base = np.floor(src).astype(np.int64)
    # 4 taps at base-1 .. base+2; indices replicated at the borders
    taps = base[:, None] + np.arange(-1, 3)[None, :]
    idx = np.clip(taps, 0, n_in - 1)
    return idx, bicubic_weights(src[:, None] - taps)


def upsample(x: HSICube, factor: int) -> HSICube:
    """Band-wise separable bicubic upsampling with replicated borders.

    Output pixel centers follow the half-pixel convention
    ``src = (dst + 0.5) / factor - 0.5``, so ``factor == 1`` is the identity.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise InvalidArgumentError(f"upsample factor must be a positive integer, got {factor!r}")
    if factor == 1:
        return HSICube(x.data.copy())
    data = x.data.astype(np.float64, copy=False)
    idx_r, w_r = _axis_weights(x.height, factor)
    idx_c, w_c = _axis_weights(x.width, factor)
    # rows: (H*f, W, B)
    rows = np.einsum("ot,otwb->owb", w_r, data[idx_r, :, :])
    # cols: (H*f, W*f, B)
    out = np.einsum("ot,hotb->hob", w_c, rows[:, idx_c, :])
    return HSICube(out)


def svd_unmix(x_up: HSICube, k: int) -> Tuple[EndmemberMatrix, AbundanceMap, SVDFactors]:
    """Decouple a cube into a rank-``k`` spectral basis and abundances.

    The basis is the first ``k`` left singular vectors of the (bands, pixels)
    matricization, with a deterministic sign convention: the largest-magnitude
    entry of each basis column is made positive. Abundances are the exact
    projection ``basis.T @ matrix``.
    """
    bands = x_up.bands
    n_pix = x_up.height * x_up.width
    if not isinstance(k, (int, np.integer)) or k < 1 or k > bands:
        raise InvalidArgumentError(f"rank k must satisfy 1 <= k <= bands ({bands}), got {k!r}")
    if k > min(bands, n_pix):
        raise InvalidArgumentError(
            f"rank k={k} exceeds the cube's maximum factor rank {min(bands, n_pix)}")
    mat = x_up.as_matrix().astype(np.float64, copy=False)
    if not np.any(mat):
        raise DegenerateInputError("cannot unmix an all-zero cube")
    u, s, v_t = np.linalg.svd(mat, full_matrices=False)
    # sign convention: flip columns so the dominant entry of each is positive
    dominant = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[dominant, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    u = u * signs[None, :]
    v_t = v_t * signs[:, None]
    e = EndmemberMatrix(u[:, :k].copy())
    a = e.e.T @ mat
    abund = AbundanceMap.from_matrix(a, x_up.height, x_up.width)
    return e, abund, SVDFactors(u, s, v_t)


def mix(e: EndmemberMatrix, a_hat: AbundanceMap) -> HSICube:
    """Mix abundances through the spectral basis: cube = basis @ abundances."""
    if a_hat.rank != e.rank:
        raise InvalidArgumentError(
            f"abundance rank {a_hat.rank} does not match basis rank {e.rank}")
    mat = e.e @ a_hat.as_matrix()
    return HSICube.from_matrix(mat, a_hat.height, a_hat.width)


def reconstruct(y_res: HSICube, x_up: HSICube, clamp: bool = False) -> HSICube:
    """Add the residual cube to the upsampled base; optionally clamp to [0, 1].

    Clamping is off by default: intermediate values stay unclamped and only
    export paths clamp.
    """
    if y_res.data.shape != x_up.data.shape:
        raise InvalidArgumentError(
            f"shape mismatch: residual {y_res.data.shape} vs base {x_up.data.shape}")
    out = y_res.data + x_up.data
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return HSICube(out)
