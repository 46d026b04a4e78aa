"""Core raster and factorization types for the data pipeline.

All rasters are numpy arrays in channel-last layout: an HSI cube is
(height, width, bands), an RGB-like reference is (height, width, channels).
The network side (see ``network``) converts these to torch NCHW tensors at
its boundary; flow fields, similarity maps and feature maps live there as
plain tensors with documented layouts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .errors import InvalidArgumentError

NDArrayF = npt.NDArray[np.floating]

_ORTHO_TOL = 1e-6


def _require_finite_raster(data: np.ndarray, name: str) -> None:
    if not isinstance(data, np.ndarray) or data.ndim != 3:
        raise InvalidArgumentError(f"{name} must be a 3-D numpy array, got "
                                   f"{type(data).__name__} with ndim "
                                   f"{getattr(data, 'ndim', None)}")
    if not np.issubdtype(data.dtype, np.floating):
        raise InvalidArgumentError(f"{name} must have a floating dtype, got {data.dtype}")
    if data.shape[0] < 1 or data.shape[1] < 1 or data.shape[2] < 1:
        raise InvalidArgumentError(f"{name} dimensions must be positive, got {data.shape}")
    if not np.isfinite(data).all():
        raise InvalidArgumentError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class HSICube:
    """Hyperspectral raster, shape (height, width, bands), finite values.

    Values are nominally reflectance in [0, 1] but the range is not enforced:
    residual cubes produced during reconstruction are signed.
    """

    data: NDArrayF

    def __post_init__(self):
        _require_finite_raster(self.data, "HSICube.data")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    def as_matrix(self) -> NDArrayF:
        """Matricized view, shape (bands, height * width), pixel-major columns."""
        h, w, b = self.data.shape
        return self.data.reshape(h * w, b).T

    @classmethod
    def from_matrix(cls, mat: np.ndarray, height: int, width: int) -> "HSICube":
        """Inverse of :meth:`as_matrix`."""
        if mat.ndim != 2 or mat.shape[1] != height * width:
            raise InvalidArgumentError(
                f"matrix shape {mat.shape} incompatible with {height}x{width} raster")
        return cls(np.ascontiguousarray(mat.T.reshape(height, width, mat.shape[0])))

    def clamped(self) -> "HSICube":
        """Copy with values clipped to [0, 1] (export only; never used in-network)."""
        return HSICube(np.clip(self.data, 0.0, 1.0))


@dataclass(frozen=True)
class RGBImage:
    """Reference image raster, shape (height, width, channels), values in [0, 1]."""

    data: NDArrayF

    def __post_init__(self):
        _require_finite_raster(self.data, "RGBImage.data")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise InvalidArgumentError("RGBImage values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class SVDFactors:
    """Economy SVD of a matricized cube: ``matrix = u @ diag(s) @ v_t``.

    ``u`` columns are orthonormal; ``s`` is non-increasing and non-negative.
    Only the economy right factor is stored, never the full pixel-by-pixel one.
    """

    u: NDArrayF
    s: NDArrayF
    v_t: NDArrayF

    def __post_init__(self):
        if self.u.ndim != 2 or self.s.ndim != 1 or self.v_t.ndim != 2:
            raise InvalidArgumentError("SVDFactors expects u (2-D), s (1-D), v_t (2-D)")
        if self.u.shape[1] != self.s.shape[0] or self.v_t.shape[0] != self.s.shape[0]:
            raise InvalidArgumentError("SVDFactors factor shapes are inconsistent")
        if np.any(self.s < 0) or np.any(np.diff(self.s) > 0):
            raise InvalidArgumentError("singular values must be non-negative and non-increasing")
        gram = self.u.T @ self.u
        if np.abs(gram - np.eye(self.u.shape[1])).max() > _ORTHO_TOL:
            raise InvalidArgumentError("columns of u are not orthonormal")


@dataclass(frozen=True)
class EndmemberMatrix:
    """Spectral basis, shape (bands, rank); columns orthonormal."""

    e: NDArrayF

    def __post_init__(self):
        if self.e.ndim != 2:
            raise InvalidArgumentError("EndmemberMatrix.e must be 2-D")
        bands, rank = self.e.shape
        if rank < 1 or rank > bands:
            raise InvalidArgumentError(f"rank must satisfy 1 <= rank <= bands, got {rank}/{bands}")
        gram = self.e.T @ self.e
        if np.abs(gram - np.eye(rank)).max() > _ORTHO_TOL:
            raise InvalidArgumentError("endmember columns are not orthonormal")

    @property
    def bands(self) -> int:
        return self.e.shape[0]

    @property
    def rank(self) -> int:
        return self.e.shape[1]


@dataclass(frozen=True)
class AbundanceMap:
    """Per-pixel coefficients over endmembers, shape (height, width, rank)."""

    data: NDArrayF

    def __post_init__(self):
        _require_finite_raster(self.data, "AbundanceMap.data")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def rank(self) -> int:
        return self.data.shape[2]

    def as_matrix(self) -> NDArrayF:
        h, w, k = self.data.shape
        return self.data.reshape(h * w, k).T

    @classmethod
    def from_matrix(cls, mat: np.ndarray, height: int, width: int) -> "AbundanceMap":
        if mat.ndim != 2 or mat.shape[1] != height * width:
            raise InvalidArgumentError(
                f"matrix shape {mat.shape} incompatible with {height}x{width} raster")
        return cls(np.ascontiguousarray(mat.T.reshape(height, width, mat.shape[0])))


@dataclass(frozen=True)
class SceneSpec:
    """Parameters for one synthetic reflectance scene.

    ``smoothness`` is the nominal blob radius (in pixels) of the spatial
    abundance fields; larger values give smoother scenes.
    """

    height: int
    width: int
    bands: int
    scene_rank: int
    seed: int
    smoothness: float = 8.0

    def __post_init__(self):
        for name in ("height", "width", "bands", "scene_rank"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"SceneSpec.{name} must be positive")
        if self.scene_rank > self.bands:
            raise InvalidArgumentError(
                f"scene_rank ({self.scene_rank}) must not exceed bands ({self.bands})")
        if self.smoothness <= 0:
            raise InvalidArgumentError("SceneSpec.smoothness must be positive")


@dataclass(frozen=True)
class SpectralResponse:
    """Spectral response matrix, shape (channels, bands), row-stochastic."""

    matrix: NDArrayF

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise InvalidArgumentError("SpectralResponse.matrix must be 2-D")
        if np.any(self.matrix < 0):
            raise InvalidArgumentError("SpectralResponse.matrix must be non-negative")
        row_sums = self.matrix.sum(axis=1)
        if np.abs(row_sums - 1.0).max() > 1e-6:
            raise InvalidArgumentError("SpectralResponse rows must sum to 1 within 1e-6")

    @property
    def channels(self) -> int:
        return self.matrix.shape[0]

    @property
    def bands(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def box(cls, bands: int, channels: int = 3) -> "SpectralResponse":
        """Contiguous box-filter response: channel c averages its band group."""
        if channels < 1 or bands < channels:
            raise InvalidArgumentError("need bands >= channels >= 1")
        edges = np.linspace(0, bands, channels + 1).round().astype(int)
        mat = np.zeros((channels, bands))
        for c in range(channels):
            lo, hi = edges[c], max(edges[c + 1], edges[c] + 1)
            mat[c, lo:hi] = 1.0 / (hi - lo)
        return cls(mat)


@dataclass(frozen=True)
class MisregistrationSpec:
    """Geometric perturbation applied to the reference image.

    ``homography`` maps output pixel coordinates (x, y) to input sampling
    coordinates; it is stored normalized so that h33 == 1. The non-rigid part
    is a smooth random displacement field with peak magnitude
    ``nonrigid_amplitude`` pixels and correlation length ``nonrigid_scale``.
    """

    homography: NDArrayF
    nonrigid_amplitude: float = 0.0
    nonrigid_scale: float = 8.0
    seed: int = 0

    def __post_init__(self):
        h = np.asarray(self.homography, dtype=np.float64)
        if h.shape != (3, 3):
            raise InvalidArgumentError("homography must be a 3x3 matrix")
        if abs(h[2, 2]) < 1e-12:
            raise InvalidArgumentError("homography h33 must be non-zero")
        h = h / h[2, 2]
        if abs(np.linalg.det(h)) <= 1e-8:
            raise InvalidArgumentError("homography must be invertible (|det| > 1e-8)")
        object.__setattr__(self, "homography", h)
        if self.nonrigid_amplitude < 0:
            raise InvalidArgumentError("nonrigid_amplitude must be >= 0")
        if self.nonrigid_scale <= 0:
            raise InvalidArgumentError("nonrigid_scale must be positive")

    @classmethod
    def identity(cls) -> "MisregistrationSpec":
        return cls(homography=np.eye(3))

    @classmethod
    def translation(cls, dx: float, dy: float, nonrigid_amplitude: float = 0.0,
                    nonrigid_scale: float = 8.0, seed: int = 0) -> "MisregistrationSpec":
        h = np.eye(3)
        h[0, 2] = dx
        h[1, 2] = dy
        return cls(h, nonrigid_amplitude, nonrigid_scale, seed)

    @classmethod
    def random(cls, seed: int, max_rotation_deg: float = 3.0, max_translation: float = 8.0,
               max_projective: float = 1e-4, nonrigid_amplitude: float = 1.0,
               nonrigid_scale: float = 8.0) -> "MisregistrationSpec":
        """Mild random pose change: in-plane rotation, translation, projective terms."""
        rng = np.random.default_rng(seed)
        theta = np.deg2rad(rng.uniform(-max_rotation_deg, max_rotation_deg))
        tx, ty = rng.uniform(-max_translation, max_translation, size=2)
        px, py = rng.uniform(-max_projective, max_projective, size=2)
        h = np.array([
            [np.cos(theta), -np.sin(theta), tx],
            [np.sin(theta), np.cos(theta), ty],
            [px, py, 1.0],
        ])
        return cls(h, nonrigid_amplitude, nonrigid_scale, seed)


@dataclass(frozen=True)
class MetricReport:
    """PSNR (dB), SSIM (unitless, <= 1) and SAM (radians in [0, pi])."""

    psnr: float
    ssim: float
    sam: float

    def __post_init__(self):
        if self.ssim > 1.0 + 1e-9:
            raise InvalidArgumentError("ssim must be <= 1")
        if not (0.0 <= self.sam <= np.pi + 1e-9):
            raise InvalidArgumentError("sam must lie in [0, pi]")

    def to_dict(self) -> dict:
        """JSON-safe dict; +inf PSNR is serialized as the string 'inf'."""
        return {
            "psnr": "inf" if np.isinf(self.psnr) else float(self.psnr),
            "ssim": float(self.ssim),
            "sam": float(self.sam),
        }
