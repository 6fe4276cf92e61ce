"""Command-line interface.

Subcommands: mask, complete, fit, detail, run, synth, verify. Flags mirror
the run-config fields; --config points at a key=value file whose entries
individual flags override. Exit codes: 0 success, 2 validation error,
3 stage failure. FACERECON_LOG sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import harness, imageio, occlusion, pipeline
from .pipeline import ConfigError, RunConfig, StageError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3

_CONFIG_FLAGS = [
    ("image", str, "input image I0 (png/ppm/pgm)"),
    ("landmarks", str, "68-point landmark text file"),
    ("parsing", str, "parsing map (labels, pgm/png)"),
    ("model", str, "morphable model container"),
    ("out_dir", str, "output directory"),
    ("external_completion", str, "externally completed image"),
    ("completed", str, "completed image for stage 2 (defaults to out_dir/completed.png)"),
    ("clean", str, "ground-truth clean image for metrics"),
    ("albedo", str, "per-vertex albedo text file"),
    ("bump_gt", str, "bump map to refine (pgm with sidecar)"),
    ("gt_depth", str, "ground-truth detailed depth for metrics"),
    ("occluder_labels", str, "comma-separated occluder labels (default 6,7)"),
    ("hull_margin", float, "landmark-hull dilation margin in px"),
    ("delta_max", str, "bump half-range mm, 'auto', or 0 to disable detail"),
    ("levels", int, "bump quantization levels"),
    ("landmark_weight", float, "landmark term weight"),
    ("photo_weight", float, "photometric term weight"),
    ("prior_weight", float, "coefficient prior weight"),
    ("lmk_iterations", int, "landmark fit iteration cap"),
    ("photo_iterations", int, "photometric fit iteration cap"),
    ("convergence_tol", float, "relative cost-decrease stop threshold"),
    ("damping_init", float, "initial Levenberg-Marquardt damping"),
    ("seed", int, "run seed recorded in metrics"),
]


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="key=value config file")
    for name, typ, helptext in _CONFIG_FLAGS:
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name,
                            type=typ, default=None, help=helptext)


def _build_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {name: getattr(args, name) for name, _, _ in _CONFIG_FLAGS
                 if getattr(args, name) is not None}
    return cfg.merged(overrides)


def _cmd_mask(args) -> int:
    cfg = _build_config(args)
    cfg._check_paths("image", "landmarks", "parsing")
    i0 = imageio.read_image(cfg.image)
    parsing = imageio.read_parsing_map(cfg.parsing)
    landmarks = imageio.read_landmarks(cfg.landmarks)
    mask = occlusion.compute_occlusion_mask(
        parsing, landmarks, occluder_labels=set(cfg.occluder_labels),
        margin=cfg.hull_margin)
    inco = occlusion.hollow_out(i0, mask)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    imageio.write_mask(out / "mask.pgm", mask)
    imageio.write_image(out / "inco.png", inco)
    print(f"mask: {int(mask.sum())} px ({100.0 * mask.mean():.2f}%)")
    return EXIT_OK


def _cmd_complete(args) -> int:
    cfg = _build_config(args)
    result = pipeline.run_stage1(cfg)
    _print_metrics("stage1", result["metrics"])
    return EXIT_OK


def _cmd_fit(args) -> int:
    cfg = _build_config(args)
    result = pipeline.run_fit(cfg)
    _print_metrics("fit", result["metrics"])
    return EXIT_OK


def _cmd_detail(args) -> int:
    cfg = _build_config(args)
    result = pipeline.run_detail(cfg)
    _print_metrics("detail", result["metrics"])
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = _build_config(args)
    consolidated = pipeline.run_all(cfg)
    _print_metrics("stage1", consolidated["stage1"])
    _print_metrics("fit", consolidated["fit"])
    _print_metrics("detail", consolidated["detail"])
    return EXIT_OK


def _cmd_synth(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = harness.make_synthetic_model(seed=args.model_seed)
    albedo = harness.make_albedo(model, seed=args.model_seed)
    from .morphable import save_model

    save_model(model, out / "model.ofmm")
    np.savetxt(out / "albedo.txt", albedo, fmt="%.17g")
    seeds = (range(args.seed, args.seed + args.count) if args.seeds is None
             else [int(s) for s in args.seeds.split(",")])
    for seed in seeds:
        scene = harness.generate_scene(model, albedo, seed,
                                       difficulty=args.difficulty,
                                       width=args.size, height=args.size)
        harness.write_scene(scene, out / f"scene_{seed}")
        print(f"scene_{seed}: difficulty={args.difficulty} "
              f"occluder={int(scene.occluder_mask.sum())} px")
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .verify import run_verification

    ok = run_verification(verbose=True)
    return EXIT_OK if ok else EXIT_STAGE


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("FACERECON_LOG", "WARNING").upper(),
        format="%(name)s %(levelname)s: %(message)s")

    parser = argparse.ArgumentParser(
        prog="facerecon",
        description="occlusion-robust detailed face reconstruction")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, helptext in [
        ("mask", _cmd_mask, "derive occlusion mask and hollowed image"),
        ("complete", _cmd_complete, "stage 1: mask + completion + metrics"),
        ("fit", _cmd_fit, "stage 2a: fit model to completed image"),
        ("detail", _cmd_detail, "stage 2b: bump detail, depth, meshes"),
        ("run", _cmd_run, "full two-stage pipeline"),
    ]:
        p = sub.add_parser(name, help=helptext)
        _add_config_flags(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    p.add_argument("--out-dir", default="synth", help="target directory")
    p.add_argument("--seed", type=int, default=0, help="first scene seed")
    p.add_argument("--count", type=int, default=1, help="number of scenes")
    p.add_argument("--seeds", default=None, help="explicit comma-separated seeds")
    p.add_argument("--difficulty", default="none",
                   choices=["none", "small", "large"])
    p.add_argument("--size", type=int, default=96, help="image side length")
    p.add_argument("--model-seed", type=int, default=7)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("verify", help="run invariant and gradient self-checks")
    p.set_defaults(func=_cmd_verify)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


def _print_metrics(title: str, metrics: dict):
    print(f"-- {title}")
    for key, value in sorted(metrics.items()):
        if isinstance(value, dict):
            for k2, v2 in sorted(value.items()):
                print(f"  {key}.{k2:<22} {v2}")
        else:
            print(f"  {key:<26} {value}")


if __name__ == "__main__":
    sys.exit(main())
