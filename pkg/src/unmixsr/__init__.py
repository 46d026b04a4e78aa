"""Unmixing-based fusion for unregistered hyperspectral super-resolution."""

__version__ = "0.1.0"

from .errors import (ConfigError, DataFormatError, DegenerateInputError,
                     InvalidArgumentError, NumericalError, UnmixsrError)
from .types import (AbundanceMap, EndmemberMatrix, HSICube, MetricReport,
                    MisregistrationSpec, RGBImage, SceneSpec, SpectralResponse,
                    SVDFactors)
from .spectral import mix, reconstruct, svd_unmix, upsample
from .scene import blur_downsample, misregister, project_to_rgb, synth_scene
from .metrics import compute_report, psnr, sam, ssim
from .network import FusionModel, ModelConfig, count_parameters, summarize
from .training import DatasetSpec, TrainConfig, evaluate, make_pair, train
from .motivation import misregistration_sweep, motivation_experiment

__all__ = [
    "__version__",
    "UnmixsrError", "InvalidArgumentError", "DegenerateInputError",
    "DataFormatError", "ConfigError", "NumericalError",
    "HSICube", "RGBImage", "SVDFactors", "EndmemberMatrix", "AbundanceMap",
    "SceneSpec", "SpectralResponse", "MisregistrationSpec", "MetricReport",
    "upsample", "svd_unmix", "mix", "reconstruct",
    "synth_scene", "blur_downsample", "project_to_rgb", "misregister",
    "psnr", "ssim", "sam", "compute_report",
    "ModelConfig", "FusionModel", "count_parameters", "summarize",
    "TrainConfig", "DatasetSpec", "train", "evaluate", "make_pair",
    "motivation_experiment", "misregistration_sweep",
]
