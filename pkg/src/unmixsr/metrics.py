"""Image-quality metrics: PSNR, band-averaged SSIM, and spectral angle.

SSIM uses the canonical 11x11 Gaussian window (sigma 1.5), constants
K1 = 0.01 / K2 = 0.03 and dynamic range 1, evaluated on valid windows only
and averaged over bands. SAM is the mean per-pixel angle in radians.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError
from .types import HSICube, MetricReport

__all__ = ["psnr", "ssim", "sam", "compute_report"]

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_K1 = 0.01
_K2 = 0.03


def _check_pair(a: HSICube, b: HSICube) -> None:
    if a.data.shape != b.data.shape:
        raise InvalidArgumentError(
            f"shape mismatch: {a.data.shape} vs {b.data.shape}")


def psnr(a: HSICube, b: HSICube, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give +inf."""
    _check_pair(a, b)
    if peak <= 0:
        raise InvalidArgumentError("peak must be positive")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse = np.mean(diff ** 2)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak ** 2 / mse))


def _ssim_kernel() -> np.ndarray:
    offsets = np.arange(_SSIM_WINDOW, dtype=np.float64) - (_SSIM_WINDOW - 1) / 2.0
    taps = np.exp(-0.5 * (offsets / _SSIM_SIGMA) ** 2)
    return taps / taps.sum()


def _valid_filter(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation of a 2-D image with 1-D taps."""
    k = len(taps)
    h, w = img.shape
    rows = np.zeros((h - k + 1, w))
    for t in range(k):
        rows += taps[t] * img[t:t + h - k + 1, :]
    out = np.zeros((h - k + 1, w - k + 1))
    for t in range(k):
        out += taps[t] * rows[:, t:t + w - k + 1]
    return out


def ssim(a: HSICube, b: HSICube) -> float:
    """Mean structural similarity, averaged over bands (dynamic range 1)."""
    _check_pair(a, b)
    if a.height < _SSIM_WINDOW or a.width < _SSIM_WINDOW:
        raise InvalidArgumentError(
            f"ssim needs rasters of at least {_SSIM_WINDOW}x{_SSIM_WINDOW} pixels")
    taps = _ssim_kernel()
    c1 = _K1 ** 2
    c2 = _K2 ** 2
    scores = []
    for band in range(a.bands):
        x = a.data[:, :, band].astype(np.float64)
        y = b.data[:, :, band].astype(np.float64)
        mu_x = _valid_filter(x, taps)
        mu_y = _valid_filter(y, taps)
        var_x = _valid_filter(x * x, taps) - mu_x ** 2
        var_y = _valid_filter(y * y, taps) - mu_y ** 2
        cov = _valid_filter(x * y, taps) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def sam(a: HSICube, b: HSICube, return_skipped: bool = False):
    """Mean spectral angle in radians; zero-norm pixels are skipped and counted."""
    _check_pair(a, b)
    x = a.data.reshape(-1, a.bands).astype(np.float64)
    y = b.data.reshape(-1, b.bands).astype(np.float64)
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    valid = (nx > 0) & (ny > 0)
    skipped = int(np.count_nonzero(~valid))
    if not np.any(valid):
        raise DegenerateInputError("every pixel has a zero-norm spectrum")
    cosine = np.sum(x[valid] * y[valid], axis=1) / (nx[valid] * ny[valid])
    angle = float(np.mean(np.arccos(np.clip(cosine, -1.0, 1.0))))
    if return_skipped:
        return angle, skipped
    return angle


def compute_report(a: HSICube, b: HSICube, peak: float = 1.0) -> MetricReport:
    """All three metrics for a prediction/reference pair."""
    return MetricReport(psnr=psnr(a, b, peak), ssim=ssim(a, b), sam=sam(a, b))
