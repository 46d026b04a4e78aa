"""Training and evaluation loops over synthetic scene pairs.

Training pairs are generated on the fly from per-scene seeds: each HR scene
is blurred and decimated into the LR cube, and projected + misregistered into
the reference image. Everything downstream of the seeds is deterministic, so
identical runs produce byte-identical logs and checkpoints, and a checkpoint
carries enough optimizer state to resume exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import InvalidArgumentError, NumericalError
from .metrics import compute_report
from .network import FusionModel, ModelConfig
from .scene import blur_downsample, misregister, project_to_rgb, synth_scene
from .spectral import upsample
from .types import HSICube, MisregistrationSpec, RGBImage, SceneSpec, SpectralResponse

__all__ = ["TrainConfig", "DatasetSpec", "SamplePair", "TrainResult", "make_pair",
           "train", "evaluate", "load_model", "save_model_checkpoint",
           "apply_thread_cap", "THREADS_ENV_VAR"]

THREADS_ENV_VAR = "UNMIXSR_NUM_THREADS"


def apply_thread_cap() -> None:
    """Honor the thread-count cap environment variable, if set."""
    value = os.environ.get(THREADS_ENV_VAR)
    if value:
        try:
            torch.set_num_threads(max(1, int(value)))
        except ValueError:
            raise InvalidArgumentError(
                f"{THREADS_ENV_VAR} must be an integer, got {value!r}")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer recipe: decoupled-weight-decay Adam minimizing L1."""

    learning_rate: float = 1e-5
    weight_decay: float = 5e-5
    batch_size: int = 1
    epochs: int = 30
    seed: int = 0
    loss: str = "l1"
    scale_factor: int = 4

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise InvalidArgumentError("rates must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidArgumentError("batch_size and epochs must be >= 1")
        if self.loss != "l1":
            raise InvalidArgumentError(f"unsupported loss {self.loss!r} (only 'l1')")
        if self.scale_factor < 1:
            raise InvalidArgumentError("scale_factor must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgumentError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class DatasetSpec:
    """Synthetic dataset layout; scene ``train_scenes + j`` is held-out scene j."""

    train_scenes: int = 4
    eval_scenes: int = 1
    height: int = 64
    width: int = 64
    bands: int = 16
    scene_rank: int = 4
    smoothness: float = 8.0
    seed: int = 0
    misreg_translation: float = 8.0
    misreg_rotation_deg: float = 1.0
    misreg_projective: float = 1e-5
    misreg_nonrigid_amplitude: float = 1.0
    misreg_nonrigid_scale: float = 8.0

    def __post_init__(self):
        if self.train_scenes < 1 or self.eval_scenes < 0:
            raise InvalidArgumentError("need at least one training scene")

    def scene_spec(self, index: int) -> SceneSpec:
        return SceneSpec(height=self.height, width=self.width, bands=self.bands,
                         scene_rank=self.scene_rank, smoothness=self.smoothness,
                         seed=self.seed + 7919 * (index + 1))

    def misreg_spec(self, index: int) -> MisregistrationSpec:
        return MisregistrationSpec.random(
            seed=self.seed + 104729 * (index + 1),
            max_rotation_deg=self.misreg_rotation_deg,
            max_translation=self.misreg_translation,
            max_projective=self.misreg_projective,
            nonrigid_amplitude=self.misreg_nonrigid_amplitude,
            nonrigid_scale=self.misreg_nonrigid_scale)

    def response(self) -> SpectralResponse:
        return SpectralResponse.box(self.bands)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgumentError(f"unknown DatasetSpec fields: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class SamplePair:
    index: int
    hr: HSICube
    lr: HSICube
    ref: RGBImage


@dataclass(frozen=True)
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    epoch_losses: List[float]
    global_step: int


def make_pair(spec: DatasetSpec, index: int, scale: int) -> SamplePair:
    """Deterministic (HR, LR, misregistered reference) triple for one scene."""
    hr = synth_scene(spec.scene_spec(index))
    lr = blur_downsample(hr, scale)
    rgb = project_to_rgb(hr, spec.response())
    ref = misregister(rgb, spec.misreg_spec(index))
    return SamplePair(index=index, hr=hr, lr=lr, ref=ref)


def _model_state_arrays(model: FusionModel) -> Dict[str, np.ndarray]:
    return {name: tensor.detach().cpu().numpy().copy()
            for name, tensor in model.state_dict().items()}


def _optimizer_state_arrays(model: FusionModel,
                            opt: torch.optim.Optimizer) -> Dict[str, np.ndarray]:
    arrays: Dict[str, np.ndarray] = {}
    for name, param in model.named_parameters():
        state = opt.state.get(param)
        if not state:
            continue
        for key, value in state.items():
            tensor = value if isinstance(value, torch.Tensor) else torch.tensor(value)
            arrays[f"optim/{name}/{key}"] = tensor.detach().cpu().numpy().copy()
    return arrays


def _restore_optimizer_state(model: FusionModel, opt: torch.optim.Optimizer,
                             arrays: Dict[str, np.ndarray]) -> None:
    for name, param in model.named_parameters():
        prefix = f"optim/{name}/"
        state = {key[len(prefix):]: torch.from_numpy(value.copy())
                 for key, value in arrays.items() if key.startswith(prefix)}
        if state:
            opt.state[param] = state


def save_model_checkpoint(path, model: FusionModel, train_cfg: TrainConfig,
                          data_spec: DatasetSpec, epoch: int, global_step: int,
                          opt: Optional[torch.optim.Optimizer] = None) -> None:
    tensors = _model_state_arrays(model)
    if opt is not None:
        tensors.update(_optimizer_state_arrays(model, opt))
    config = {
        "model": model.config.to_dict(),
        "train": train_cfg.to_dict(),
        "data": data_spec.to_dict(),
    }
    extra = {"epoch": epoch, "global_step": global_step}
    save_checkpoint(path, tensors, config, extra)


def load_model(checkpoint_path, dtype: torch.dtype = torch.float32):
    """Rebuild a model (and its metadata) from a checkpoint file."""
    tensors, config, extra = load_checkpoint(checkpoint_path)
    model_cfg = ModelConfig.from_dict(config["model"])
    model = FusionModel(model_cfg, seed=0, dtype=dtype)
    state = {name: torch.from_numpy(array.copy()).to(
                 model.state_dict()[name].dtype)
             for name, array in tensors.items() if not name.startswith("optim/")}
    model.load_state_dict(state)
    return model, config, extra, tensors


def _prepare_batches(model: FusionModel, pairs: List[SamplePair], batch_size: int):
    prepared = []
    for pair in pairs:
        abund, ref, basis, x_up, _ = model.prepare_inputs(pair.lr, pair.ref)
        target = torch.from_numpy(np.ascontiguousarray(
            pair.hr.data.transpose(2, 0, 1))[None]).to(dtype=model.dtype)
        prepared.append((abund, ref, basis, x_up, target))
    batches = []
    for start in range(0, len(prepared), batch_size):
        chunk = prepared[start:start + batch_size]
        abund = torch.cat([c[0] for c in chunk])
        ref = torch.cat([c[1] for c in chunk])
        basis = torch.stack([c[2] for c in chunk])
        x_up = torch.cat([c[3] for c in chunk])
        target = torch.cat([c[4] for c in chunk])
        batches.append((abund, ref, basis, x_up, target))
    return batches


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, data_spec: DatasetSpec,
          out_dir, resume_from=None) -> TrainResult:
    """Run the optimization loop; writes a rolling checkpoint and a JSONL log.

    Aborts with :class:`NumericalError` (after dumping diagnostics) if the
    loss goes non-finite.
    """
    apply_thread_cap()
    if train_cfg.scale_factor != model_cfg.scale_factor:
        raise InvalidArgumentError(
            f"train scale_factor {train_cfg.scale_factor} != model scale_factor "
            f"{model_cfg.scale_factor}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / "checkpoint.uxck"
    log_path = out_dir / "train_log.jsonl"

    model = FusionModel(model_cfg, seed=train_cfg.seed)
    opt = torch.optim.AdamW(model.parameters(), lr=train_cfg.learning_rate,
                            weight_decay=train_cfg.weight_decay)
    start_epoch = 0
    global_step = 0
    if resume_from is not None:
        tensors, config, extra = load_checkpoint(resume_from)
        if config["model"] != model_cfg.to_dict():
            raise InvalidArgumentError(
                "checkpoint model config does not match the requested config")
        state = {name: torch.from_numpy(arr.copy()).to(model.state_dict()[name].dtype)
                 for name, arr in tensors.items() if not name.startswith("optim/")}
        model.load_state_dict(state)
        _restore_optimizer_state(model, opt,
                                 {k: v for k, v in tensors.items()
                                  if k.startswith("optim/")})
        start_epoch = int(extra["epoch"])
        global_step = int(extra["global_step"])

    pairs = [make_pair(data_spec, i, train_cfg.scale_factor)
             for i in range(data_spec.train_scenes)]
    batches = _prepare_batches(model, pairs, train_cfg.batch_size)

    epoch_losses: List[float] = []
    log_mode = "a" if resume_from is not None else "w"
    with open(log_path, log_mode) as log:
        for epoch in range(start_epoch, train_cfg.epochs):
            losses = []
            for abund, ref, basis, x_up, target in batches:
                output = model(abund, ref, basis, x_up)
                loss = torch.mean(torch.abs(output - target))
                value = float(loss.detach())
                if not np.isfinite(value):
                    dump = out_dir / "diagnostics.json"
                    dump.write_text(json.dumps({
                        "epoch": epoch + 1,
                        "global_step": global_step,
                        "loss": repr(value),
                        "param_norms": {n: float(p.detach().norm())
                                        for n, p in model.named_parameters()},
                    }, sort_keys=True, indent=2))
                    raise NumericalError(
                        f"non-finite loss {value!r} at step {global_step}; "
                        f"diagnostics written to {dump}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                global_step += 1
                losses.append(value)
            mean_loss = float(np.mean(losses))
            epoch_losses.append(mean_loss)
            record = {"epoch": epoch + 1, "global_step": global_step,
                      "mean_loss": mean_loss, "last_loss": losses[-1]}
            log.write(json.dumps(record, sort_keys=True) + "\n")
            save_model_checkpoint(checkpoint_path, model, train_cfg, data_spec,
                                  epoch + 1, global_step, opt)
    return TrainResult(checkpoint_path=checkpoint_path, log_path=log_path,
                       epoch_losses=epoch_losses, global_step=global_step)


def _mean_report(reports) -> dict:
    return {
        "psnr": "inf" if any(np.isinf(r.psnr) for r in reports)
                else float(np.mean([r.psnr for r in reports])),
        "ssim": float(np.mean([r.ssim for r in reports])),
        "sam": float(np.mean([r.sam for r in reports])),
    }


def _format_metric(value) -> str:
    if value == "inf" or (isinstance(value, float) and np.isinf(value)):
        return f"{'inf':>10}"
    return f"{value:>10.4f}"


def evaluate(model: FusionModel, data_spec: DatasetSpec, scale: int,
             out_dir=None) -> dict:
    """Per-scene and mean metrics for the model and the bicubic baseline.

    Held-out scenes are evaluated; with ``out_dir`` set, a machine-readable
    ``results.json`` and an aligned ``results.txt`` table are written.
    """
    apply_thread_cap()
    if data_spec.eval_scenes < 1:
        raise InvalidArgumentError("evaluation needs at least one held-out scene")
    scenes = []
    model_reports = []
    bicubic_reports = []
    for j in range(data_spec.eval_scenes):
        index = data_spec.train_scenes + j
        pair = make_pair(data_spec, index, scale)
        predicted = model.super_resolve(pair.lr, pair.ref)
        baseline = upsample(pair.lr, scale)
        model_report = compute_report(predicted, pair.hr)
        bicubic_report = compute_report(baseline, pair.hr)
        model_reports.append(model_report)
        bicubic_reports.append(bicubic_report)
        scenes.append({"scene": index, "model": model_report.to_dict(),
                       "bicubic": bicubic_report.to_dict()})
    results = {
        "scenes": scenes,
        "mean": {"model": _mean_report(model_reports),
                 "bicubic": _mean_report(bicubic_reports)},
    }

    lines = [f"{'scene':>6} {'variant':<8} {'psnr':>10} {'ssim':>10} {'sam':>10}"]
    for entry in scenes:
        for variant in ("model", "bicubic"):
            row = entry[variant]
            lines.append(f"{entry['scene']:>6} {variant:<8} "
                         f"{_format_metric(row['psnr'])} {_format_metric(row['ssim'])} "
                         f"{_format_metric(row['sam'])}")
    for variant in ("model", "bicubic"):
        row = results["mean"][variant]
        lines.append(f"{'mean':>6} {variant:<8} "
                     f"{_format_metric(row['psnr'])} {_format_metric(row['ssim'])} "
                     f"{_format_metric(row['sam'])}")
    table = "\n".join(lines) + "\n"

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "results.json").write_text(
            json.dumps(results, sort_keys=True, indent=2) + "\n")
        (out_dir / "results.txt").write_text(table)
    return results
