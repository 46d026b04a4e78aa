"""Synthetic scenes and the acquisition pipeline used for training pairs.

A scene is a low-rank reflectance cube: smooth non-negative spectra mixed by
softmax-normalized Gaussian-blob abundance fields. Acquisition simulates a
Gaussian blur + decimation to produce the LR HSI, a row-stochastic spectral
projection to produce the reference image, and a homography plus smooth
random displacement to misregister that reference.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .configfile import Field, format_config, parse_config
from .errors import InvalidArgumentError
from .types import HSICube, MisregistrationSpec, RGBImage, SceneSpec, SpectralResponse

__all__ = ["synth_scene", "blur_downsample", "project_to_rgb", "misregister",
           "gaussian_kernel_taps", "scene_spec_to_config", "scene_spec_from_config",
           "misreg_spec_to_config", "misreg_spec_from_config"]

SCENE_SPEC_SCHEMA = {
    "height": Field("int", required=True),
    "width": Field("int", required=True),
    "bands": Field("int", required=True),
    "scene_rank": Field("int", required=True),
    "seed": Field("int", required=True),
    "smoothness": Field("float", default=8.0),
}

MISREG_SPEC_SCHEMA = {
    "homography": Field("float_list", required=True),
    "nonrigid_amplitude": Field("float", default=0.0),
    "nonrigid_scale": Field("float", default=8.0),
    "seed": Field("int", default=0),
}


def scene_spec_to_config(spec: SceneSpec) -> str:
    """Serialize a scene spec in the flat harness config format."""
    return format_config({
        "height": spec.height, "width": spec.width, "bands": spec.bands,
        "scene_rank": spec.scene_rank, "seed": spec.seed,
        "smoothness": spec.smoothness,
    })


def scene_spec_from_config(text: str) -> SceneSpec:
    return SceneSpec(**parse_config(text, SCENE_SPEC_SCHEMA))


def misreg_spec_to_config(spec: MisregistrationSpec) -> str:
    """Serialize a misregistration spec; the homography is nine row-major floats."""
    return format_config({
        "homography": [float(v) for v in spec.homography.reshape(-1)],
        "nonrigid_amplitude": spec.nonrigid_amplitude,
        "nonrigid_scale": spec.nonrigid_scale,
        "seed": spec.seed,
    })


def misreg_spec_from_config(text: str) -> MisregistrationSpec:
    values = parse_config(text, MISREG_SPEC_SCHEMA)
    homography = values.pop("homography")
    if len(homography) != 9:
        raise InvalidArgumentError(
            f"homography needs 9 values, got {len(homography)}")
    return MisregistrationSpec(homography=np.array(homography).reshape(3, 3),
                               **values)


def synth_scene(spec: SceneSpec) -> HSICube:
    """Deterministic synthetic HR scene with values in [0, 1].

    Endmember spectra are sums of random Gaussian bumps over the band axis,
    rescaled into [0.05, 0.95]; abundances are a softmax over ``scene_rank``
    smooth blob fields, so every pixel is a convex mix of the spectra.
    """
    rng = np.random.default_rng(spec.seed)
    h, w, b, r = spec.height, spec.width, spec.bands, spec.scene_rank

    band_axis = np.arange(b, dtype=np.float64)
    spectra = np.empty((b, r))
    for j in range(r):
        n_bumps = int(rng.integers(2, 5))
        curve = np.zeros(b)
        for _ in range(n_bumps):
            center = rng.uniform(0, b - 1)
            width = rng.uniform(max(b / 10.0, 1.0), max(b / 3.0, 2.0))
            amp = rng.uniform(0.3, 1.0)
            curve += amp * np.exp(-0.5 * ((band_axis - center) / width) ** 2)
        lo, hi = curve.min(), curve.max()
        span = hi - lo if hi > lo else 1.0
        spectra[:, j] = 0.05 + 0.9 * (curve - lo) / span

    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    fields = np.empty((h, w, r))
    for j in range(r):
        n_blobs = int(rng.integers(2, 6))
        field = np.zeros((h, w))
        for _ in range(n_blobs):
            cy = rng.uniform(0, h - 1)
            cx = rng.uniform(0, w - 1)
            sigma = spec.smoothness * rng.uniform(0.5, 1.5)
            amp = rng.uniform(0.5, 1.5)
            field += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma ** 2))
        fields[:, :, j] = field

    logits = 3.0 * fields
    logits -= logits.max(axis=2, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=2, keepdims=True)
    cube = np.einsum("hwr,br->hwb", weights, spectra)
    return HSICube(cube)


def gaussian_kernel_taps(size: int = 8, sigma: float = 3.0) -> np.ndarray:
    """1-D Gaussian taps normalized to sum 1; even sizes center on the
    half-pixel midpoint (tap offsets ``t - (size - 1) / 2``)."""
    if size < 1 or sigma <= 0:
        raise InvalidArgumentError("kernel size must be >= 1 and sigma > 0")
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    taps = np.exp(-0.5 * (offsets / sigma) ** 2)
    return taps / taps.sum()


def _filter_axis(data: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    """Correlate one axis with ``taps`` under replicate padding.

    ``out[i] = sum_t taps[t] * x[i + t - left]`` with ``left = (len-1)//2``,
    so an even kernel's mass sits at offset +0.5 from the output pixel.
    """
    k = len(taps)
    left = (k - 1) // 2
    right = k - 1 - left
    pad = [(0, 0)] * data.ndim
    pad[axis] = (left, right)
    padded = np.pad(data, pad, mode="edge")
    out = np.zeros(data.shape, dtype=np.float64)
    index = [slice(None)] * data.ndim
    for t in range(k):
        index[axis] = slice(t, t + data.shape[axis])
        out += taps[t] * padded[tuple(index)]
    return out


def blur_downsample(x: HSICube, factor: int, kernel_size: int = 8,
                    sigma: float = 3.0) -> HSICube:
    """Band-wise separable Gaussian blur followed by stride-``factor`` decimation."""
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise InvalidArgumentError(f"downsample factor must be a positive integer, got {factor!r}")
    if x.height % factor or x.width % factor:
        raise InvalidArgumentError(
            f"factor {factor} must divide the raster size {x.height}x{x.width}")
    taps = gaussian_kernel_taps(kernel_size, sigma)
    blurred = _filter_axis(_filter_axis(x.data.astype(np.float64, copy=False), taps, 0), taps, 1)
    return HSICube(blurred[::factor, ::factor, :].copy())


def project_to_rgb(x: HSICube, r: SpectralResponse) -> RGBImage:
    """Project each spectrum through the response matrix: rgb = R @ spectrum."""
    if r.bands != x.bands:
        raise InvalidArgumentError(
            f"response matrix expects {r.bands} bands, cube has {x.bands}")
    out = np.einsum("hwb,cb->hwc", x.data, r.matrix)
    return RGBImage(np.clip(out, 0.0, 1.0))


def _bilinear_sample_image(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample (H, W, C) image at float coordinates with replicated borders."""
    h, w = img.shape[:2]
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def nonrigid_displacement(height: int, width: int, spec: MisregistrationSpec) -> np.ndarray:
    """Smooth random displacement field (H, W, 2) with peak magnitude
    ``spec.nonrigid_amplitude`` pixels; deterministic per seed."""
    if spec.nonrigid_amplitude == 0.0:
        return np.zeros((height, width, 2))
    rng = np.random.default_rng(spec.seed)
    noise = rng.standard_normal((height, width, 2))
    smooth = np.stack(
        [ndimage.gaussian_filter(noise[:, :, c], spec.nonrigid_scale, mode="nearest")
         for c in range(2)], axis=2)
    mags = np.sqrt((smooth ** 2).sum(axis=2))
    peak = mags.max()
    if peak <= 0:
        return np.zeros((height, width, 2))
    return smooth * (spec.nonrigid_amplitude / peak)


def misregister(img: RGBImage, spec: MisregistrationSpec) -> RGBImage:
    """Inverse-warp the image under homography + smooth displacement.

    For each output pixel p, the source coordinate is ``H(p) + d(p)`` and the
    input is bilinearly sampled there with replicated borders. An identity
    spec reproduces the input exactly.
    """
    h, w = img.height, img.width
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    hom = spec.homography
    denom = hom[2, 0] * xx + hom[2, 1] * yy + hom[2, 2]
    if np.any(np.abs(denom) < 1e-8):
        raise InvalidArgumentError("homography is degenerate over the image plane")
    sx = (hom[0, 0] * xx + hom[0, 1] * yy + hom[0, 2]) / denom
    sy = (hom[1, 0] * xx + hom[1, 1] * yy + hom[1, 2]) / denom
    disp = nonrigid_displacement(h, w, spec)
    out = _bilinear_sample_image(img.data, sx + disp[:, :, 0], sy + disp[:, :, 1])
    return RGBImage(np.clip(out, 0.0, 1.0))
