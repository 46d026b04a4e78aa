"""Command-line interface.

Subcommands: synth, degrade, train, eval, fuse, motivate, metrics.
Exit codes: 0 success, 2 usage/config error, 3 data-format error,
4 numerical failure. The UNMIXSR_NUM_THREADS environment variable caps the
torch thread count.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .configfile import Field, load_config
from .errors import (ConfigError, DataFormatError, InvalidArgumentError,
                     NumericalError)
from .metrics import compute_report
from .motivation import misregistration_sweep, motivation_experiment
from .network import ModelConfig, summarize
from .raster_io import (read_cube, read_reference, write_cube, write_preview,
                        write_raster)
from .scene import blur_downsample, misregister, project_to_rgb, synth_scene
from .training import (DatasetSpec, TrainConfig, apply_thread_cap, evaluate,
                       load_model, train)
from .types import MisregistrationSpec, SceneSpec, SpectralResponse

HARNESS_SCHEMA = {
    # model
    "bands": Field("int", default=16),
    "rank": Field("int", default=8),
    "width": Field("int", default=64),
    "scales": Field("int", default=3),
    "blocks_per_scale": Field("int", default=2),
    "window": Field("int", default=8),
    "omega": Field("float", default=2.0),
    "pe_bands": Field("int", default=4),
    "deform_kernel": Field("int", default=3),
    "ref_channels": Field("int", default=3),
    "flow_down": Field("int", default=4),
    "use_unmix": Field("bool", default=True),
    "use_scaca": Field("bool", default=True),
    "use_cfda": Field("bool", default=True),
    "use_scmf": Field("bool", default=True),
    # training
    "learning_rate": Field("float", default=1e-5),
    "weight_decay": Field("float", default=5e-5),
    "batch_size": Field("int", default=1),
    "epochs": Field("int", default=30),
    "seed": Field("int", default=0),
    "loss": Field("str", default="l1", choices=("l1",)),
    "scale_factor": Field("int", default=4),
    # dataset
    "train_scenes": Field("int", default=4),
    "eval_scenes": Field("int", default=1),
    "height": Field("int", default=64),
    "width_px": Field("int", default=64),
    "scene_rank": Field("int", default=4),
    "smoothness": Field("float", default=8.0),
    "data_seed": Field("int", default=0),
    "misreg_translation": Field("float", default=8.0),
    "misreg_rotation_deg": Field("float", default=1.0),
    "misreg_projective": Field("float", default=1e-5),
    "misreg_nonrigid_amplitude": Field("float", default=1.0),
    "misreg_nonrigid_scale": Field("float", default=8.0),
}


def build_configs(values: dict):
    """Split flat harness config values into the three typed configs."""
    model_cfg = ModelConfig(
        bands=values["bands"], rank=values["rank"], width=values["width"],
        scales=values["scales"], blocks_per_scale=values["blocks_per_scale"],
        window=values["window"], omega=values["omega"], pe_bands=values["pe_bands"],
        deform_kernel=values["deform_kernel"], scale_factor=values["scale_factor"],
        ref_channels=values["ref_channels"], flow_down=values["flow_down"],
        use_unmix=values["use_unmix"], use_scaca=values["use_scaca"],
        use_cfda=values["use_cfda"], use_scmf=values["use_scmf"])
    train_cfg = TrainConfig(
        learning_rate=values["learning_rate"], weight_decay=values["weight_decay"],
        batch_size=values["batch_size"], epochs=values["epochs"],
        seed=values["seed"], loss=values["loss"],
        scale_factor=values["scale_factor"])
    data_spec = DatasetSpec(
        train_scenes=values["train_scenes"], eval_scenes=values["eval_scenes"],
        height=values["height"], width=values["width_px"],
        bands=values["bands"], scene_rank=values["scene_rank"],
        smoothness=values["smoothness"], seed=values["data_seed"],
        misreg_translation=values["misreg_translation"],
        misreg_rotation_deg=values["misreg_rotation_deg"],
        misreg_projective=values["misreg_projective"],
        misreg_nonrigid_amplitude=values["misreg_nonrigid_amplitude"],
        misreg_nonrigid_scale=values["misreg_nonrigid_scale"])
    return model_cfg, train_cfg, data_spec


def _load_harness_config(args) -> dict:
    if args.config:
        values = load_config(args.config, HARNESS_SCHEMA)
    else:
        values = {key: field.default for key, field in HARNESS_SCHEMA.items()}
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if getattr(args, "scale", None) is not None:
        values["scale_factor"] = args.scale
    return values


def _cmd_synth(args) -> int:
    spec = SceneSpec(height=args.height, width=args.width, bands=args.bands,
                     scene_rank=args.scene_rank, seed=args.seed or 0,
                     smoothness=args.smoothness)
    cube = synth_scene(spec)
    write_cube(args.out, cube)
    print(f"wrote {args.out} ({cube.height}x{cube.width}x{cube.bands})")
    return 0


def _cmd_degrade(args) -> int:
    hr = read_cube(args.input)
    scale = args.scale or 4
    lr = blur_downsample(hr, scale)
    write_cube(args.out_lr, lr)
    response = SpectralResponse.box(hr.bands, args.ref_channels)
    rgb = project_to_rgb(hr, response)
    spec = MisregistrationSpec.random(
        seed=args.seed or 0, max_rotation_deg=args.misreg_rotation_deg,
        max_translation=args.misreg_translation,
        max_projective=args.misreg_projective,
        nonrigid_amplitude=args.misreg_nonrigid_amplitude,
        nonrigid_scale=args.misreg_nonrigid_scale)
    ref = misregister(rgb, spec)
    write_raster(args.out_ref, ref.data)
    print(f"wrote {args.out_lr} ({lr.height}x{lr.width}x{lr.bands}) and "
          f"{args.out_ref} ({ref.height}x{ref.width}x{ref.channels})")
    return 0


def _cmd_train(args) -> int:
    values = _load_harness_config(args)
    model_cfg, train_cfg, data_spec = build_configs(values)
    result = train(model_cfg, train_cfg, data_spec, args.out,
                   resume_from=args.resume)
    summary = summarize(model_cfg, data_spec.height // train_cfg.scale_factor,
                        data_spec.width // train_cfg.scale_factor)
    print(f"trained {result.global_step} steps "
          f"({summary['parameters']} parameters); "
          f"final mean loss {result.epoch_losses[-1]:.6f}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.log_path}")
    return 0


def _cmd_eval(args) -> int:
    model, config, _, _ = load_model(args.checkpoint)
    data_spec = DatasetSpec.from_dict(config["data"])
    scale = config["train"]["scale_factor"]
    results = evaluate(model, data_spec, scale, out_dir=args.out)
    print(json.dumps(results["mean"], sort_keys=True, indent=2))
    return 0


def _cmd_fuse(args) -> int:
    model, _, _, _ = load_model(args.checkpoint)
    lr = read_cube(args.lr)
    ref = read_reference(args.ref)
    cube = model.super_resolve(lr, ref)
    write_cube(args.out, cube)
    if args.preview:
        write_preview(args.preview, cube)
    print(f"wrote {args.out} ({cube.height}x{cube.width}x{cube.bands})")
    return 0


def _cmd_motivate(args) -> int:
    scale = args.scale or 4
    reports = []
    for i in range(args.scenes):
        scene = SceneSpec(height=args.height, width=args.height, bands=args.bands,
                          scene_rank=args.scene_rank,
                          seed=(args.seed or 0) + 7919 * (i + 1))
        misreg = MisregistrationSpec.random((args.seed or 0) + i,
                                            nonrigid_amplitude=1.0)
        reports.append(motivation_experiment(scene, misreg, scale, rank=args.rank))
    sweep_scene = SceneSpec(height=args.height, width=args.height, bands=args.bands,
                            scene_rank=args.scene_rank, seed=(args.seed or 0) + 1)
    sweep = misregistration_sweep(sweep_scene, scale, amplitudes=[0.0, 2.0, 4.0, 8.0])
    payload = {"scale": scale, "reports": reports, "misregistration_sweep": sweep}
    if args.out:
        Path(args.out).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    for name in ("bicubic", "unmix_hr_abundance", "unmix_ref_abundance"):
        values = [r["variants"][name]["psnr"] for r in reports]
        values = [v for v in values if v != "inf"]
        print(f"{name:<22} mean psnr {np.mean(values):8.3f} dB over {args.scenes} scenes")
    print("translation sweep (px -> psnr): "
          + ", ".join(f"{row['amplitude']:.0f}->{row['psnr']:.2f}" for row in sweep))
    return 0


def _cmd_metrics(args) -> int:
    a = read_cube(args.a)
    b = read_cube(args.b)
    report = compute_report(a, b).to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    print(json.dumps(report, sort_keys=True))
    return 0


def _add_misreg_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--misreg-translation", type=float, default=8.0)
    parser.add_argument("--misreg-rotation-deg", type=float, default=1.0)
    parser.add_argument("--misreg-projective", type=float, default=1e-5)
    parser.add_argument("--misreg-nonrigid-amplitude", type=float, default=1.0)
    parser.add_argument("--misreg-nonrigid-scale", type=float, default=8.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unmixsr",
        description="Unmixing-based fusion for unregistered hyperspectral "
                    "super-resolution")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize an HR scene cube")
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--bands", type=int, default=16)
    p.add_argument("--scene-rank", type=int, default=4)
    p.add_argument("--smoothness", type=float, default=8.0)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("degrade", help="simulate acquisition of LR HSI + reference")
    p.add_argument("--input", required=True)
    p.add_argument("--out-lr", required=True)
    p.add_argument("--out-ref", required=True)
    p.add_argument("--scale", type=int, choices=(4, 8, 16), default=None)
    p.add_argument("--ref-channels", type=int, default=3)
    p.add_argument("--seed", type=int, default=None)
    _add_misreg_options(p)
    p.set_defaults(func=_cmd_degrade)

    p = sub.add_parser("train", help="train on synthetic scenes")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default="run")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--scale", type=int, choices=(4, 8, 16), default=None)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out scenes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("fuse", help="super-resolve an LR cube with a reference")
    p.add_argument("--lr", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preview", default=None)
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("motivate", help="run the decoupling comparison experiment")
    p.add_argument("--out", default=None)
    p.add_argument("--scenes", type=int, default=5)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--bands", type=int, default=16)
    p.add_argument("--scene-rank", type=int, default=5)
    p.add_argument("--rank", type=int, default=8)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--scale", type=int, choices=(4, 8, 16), default=None)
    p.set_defaults(func=_cmd_motivate)

    p = sub.add_parser("metrics", help="PSNR/SSIM/SAM between two cubes")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_metrics)
    return parser


def main(argv=None) -> int:
    apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataFormatError as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"data access error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
