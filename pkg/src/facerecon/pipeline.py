"""Two-stage pipeline orchestration with reproducible file artifacts.

Stage 1 turns the input image into a mask, a hollowed-out image and a
completed image. Stage 2 fits the face model to the completed image and
its landmarks, then layers encoded detail on the fitted depth. Both
stages communicate through files only, so running stage 2 on stage-1
outputs reproduces a full run bit-exactly.

Runtimes are printed to standard output and deliberately kept out of the
metrics files: output trees must be bit-identical across reruns with the
same configuration and seed.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import imageio, losses, occlusion
from .bump import BumpCodec, BumpMap, apply_bump, default_codec, depth_to_mesh, extrapolate_bump
from .camera import CameraPose, project_landmarks
from .fitting import (FitConfig, ReconstructionState, fit_landmarks,
                      fit_photometric, luminance)
from .illumination import SHCoefficients
from .morphable import CoefficientVector, evaluate_geometry, load_model
from .rasterizer import rasterize

log = logging.getLogger("facerecon.pipeline")


class ConfigError(ValueError):
    """Configuration problem detected before any work starts (exit 2)."""


class StageError(RuntimeError):
    """A pipeline stage failed mid-flight (exit 3)."""


@dataclass
class RunConfig:
    """Everything a pipeline run needs; file paths plus numeric settings."""

    image: str | None = None
    landmarks: str | None = None
    parsing: str | None = None
    model: str | None = None
    out_dir: str = "out"
    external_completion: str | None = None
    completed: str | None = None
    clean: str | None = None
    albedo: str | None = None
    bump_gt: str | None = None
    gt_depth: str | None = None
    occluder_labels: tuple = tuple(sorted(occlusion.DEFAULT_OCCLUDER_LABELS))
    hull_margin: float = occlusion.DEFAULT_HULL_MARGIN
    extrapolation_margin: int = 3  # px; detail near the mask boundary is untrusted
    delta_max: float | None = None  # None = auto, 0 = bump disabled
    levels: int = 256
    landmark_weight: float = 1.0
    photo_weight: float = 1.0
    prior_weight: float = 1e-3
    lmk_iterations: int = 60
    photo_iterations: int = 6
    convergence_tol: float = 1e-10
    damping_init: float = 1e-3
    seed: int = 0

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        entries = imageio.read_manifest(path)
        return cls().merged(entries)

    def merged(self, entries: dict) -> "RunConfig":
        """New config with ``entries`` (strings allowed) overriding fields."""
        out = replace(self)
        valid = {f.name: f for f in fields(self)}
        for key, value in entries.items():
            if key not in valid:
                raise ConfigError(f"unknown config key: {key}")
            if value is None or value == "":
                continue
            if key == "occluder_labels":
                if isinstance(value, str):
                    value = tuple(int(v) for v in value.split(","))
                else:
                    value = tuple(int(v) for v in value)
            elif key in ("levels", "lmk_iterations", "photo_iterations", "seed",
                         "extrapolation_margin"):
                value = int(value)
            elif key in ("hull_margin", "delta_max", "landmark_weight",
                         "photo_weight", "prior_weight", "convergence_tol",
                         "damping_init"):
                value = None if value == "auto" else float(value)
            else:
                value = str(value)
            setattr(out, key, value)
        return out

    @classmethod
    def for_scene(cls, scene_dir, model_path, out_dir, **overrides) -> "RunConfig":
        """Config wired to a harness scene directory."""
        d = Path(scene_dir)
        cfg = cls(image=str(d / "image.png"),
                  landmarks=str(d / "landmarks.txt"),
                  parsing=str(d / "parsing.pgm"),
                  model=str(model_path),
                  out_dir=str(out_dir),
                  clean=str(d / "clean.png"),
                  albedo=str(d / "albedo.txt"),
                  bump_gt=str(d / "bump_gt.pgm"),
                  gt_depth=str(d / "depth_detailed.pgm"))
        return cfg.merged(overrides) if overrides else cfg

    def validate_stage1(self):
        self._check_paths("image", "landmarks", "parsing")

    def validate_stage2(self):
        self._check_paths("landmarks", "model")
        if self.completed is None:
            path = Path(self.out_dir) / "completed.png"
            if not path.exists():
                raise ConfigError(
                    "stage 2 needs a completed image: run stage 1 first or "
                    "pass completed=...")

    def _check_paths(self, *names):
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"missing required input: {name}")
            if not Path(value).is_file():
                raise ConfigError(f"{name} file not found: {value}")
        for name in ("external_completion", "clean", "albedo", "bump_gt",
                     "gt_depth", "completed", "model"):
            value = getattr(self, name)
            if value is not None and not Path(value).is_file():
                raise ConfigError(f"{name} file not found: {value}")


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


class _StageWriter:
    """Tracks files written by a stage so failures leave no partial output."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.written.append(p)
        return p

    def cleanup(self):
        for p in self.written:
            for extra in (p, Path(str(p) + ".txt"), Path(str(p) + ".valid.pgm")):
                if extra.exists():
                    extra.unlink()


# ---------------------------------------------------------------------------
# stage 1


def run_stage1(config: RunConfig) -> dict:
    """Mask, hollow-out and completion; writes mask.pgm, inco.png,
    completed.png and stage1_metrics.json into the output directory."""
    config.validate_stage1()
    writer = _StageWriter(config.out_dir)
    started = time.perf_counter()
    try:
        i0 = imageio.read_image(config.image)
        parsing = imageio.read_parsing_map(config.parsing)
        if parsing.shape != i0.shape[:2]:
            raise StageError("stage1: parsing map does not match image size")
        landmarks = imageio.read_landmarks(config.landmarks)

        mask = occlusion.compute_occlusion_mask(
            parsing, landmarks, occluder_labels=set(config.occluder_labels),
            margin=config.hull_margin)
        inco = occlusion.hollow_out(i0, mask)
        if config.external_completion:
            i1 = occlusion.load_external_completion(config.external_completion,
                                                    mask, inco)
        else:
            i1 = occlusion.complete_baseline(inco, mask, landmarks)

        reference = imageio.read_image(config.clean) if config.clean else i0
        metrics: dict = {"mask_pixels": int(mask.sum()),
                         "mask_fraction": float(mask.mean())}
        if mask.any():
            metrics["pixel_loss"] = losses.pixel_loss(i1, reference, mask)
            metrics["style_loss"] = losses.style_loss(i1, reference, mask)
            metrics["synthesis_loss"] = losses.synthesis_loss(i1, reference, mask)
        else:
            metrics["pixel_loss"] = None
            metrics["style_loss"] = losses.style_loss(i1, reference, mask)
            metrics["synthesis_loss"] = None

        imageio.write_mask(writer.path("mask.pgm"), mask)
        imageio.write_image(writer.path("inco.png"), inco)
        imageio.write_image(writer.path("completed.png"), i1)
        _write_json(writer.path("stage1_metrics.json"), metrics)
    except (ConfigError, StageError):
        writer.cleanup()
        raise
    except Exception as exc:
        writer.cleanup()
        raise StageError(f"stage1: {exc}") from exc
    elapsed = time.perf_counter() - started
    log.info("stage1 done in %.2fs (mask %d px)", elapsed, metrics["mask_pixels"])
    return {"metrics": metrics, "elapsed": elapsed}


# ---------------------------------------------------------------------------
# stage 2


def _state_to_manifest(state: ReconstructionState) -> dict:
    entries = {
        "alpha": state.coeffs.alpha,
        "beta": state.coeffs.beta,
        "pose_r": state.pose.r,
        "pose_t": state.pose.t,
        "pose_s": state.pose.s,
        "gamma": state.gamma.gamma,
        "iterations": len(state.trace),
    }
    for key, value in sorted(state.costs.items()):
        entries[f"cost_{key}"] = float(value)
    return entries


def state_from_manifest(path) -> ReconstructionState:
    m = imageio.read_manifest(path)
    return ReconstructionState(
        CoefficientVector(imageio.manifest_floats(m["alpha"]),
                          imageio.manifest_floats(m["beta"])),
        CameraPose(imageio.manifest_floats(m["pose_r"]),
                   imageio.manifest_floats(m["pose_t"]),
                   float(m["pose_s"])),
        SHCoefficients(imageio.manifest_floats(m["gamma"])))


def run_fit(config: RunConfig) -> dict:
    """Model fitting against the completed image; writes fit_manifest.txt,
    landmarks_fit.txt and depth_base.pgm."""
    config.validate_stage2()
    writer = _StageWriter(config.out_dir)
    started = time.perf_counter()
    try:
        completed_path = config.completed or str(Path(config.out_dir) / "completed.png")
        i1 = imageio.read_image(completed_path)
        landmarks = imageio.read_landmarks(config.landmarks)
        model = load_model(config.model)
        albedo = np.loadtxt(config.albedo) if config.albedo else None
        height, width = i1.shape[:2]

        cfg_lmk = FitConfig(max_iterations=config.lmk_iterations,
                            landmark_weight=config.landmark_weight,
                            photo_weight=0.0,
                            prior_weight=config.prior_weight,
                            convergence_tol=config.convergence_tol,
                            damping_init=config.damping_init)
        state = fit_landmarks(model, landmarks, cfg_lmk, width, height)
        if config.photo_weight > 0:
            cfg_photo = FitConfig(max_iterations=config.photo_iterations,
                                  landmark_weight=config.landmark_weight,
                                  photo_weight=config.photo_weight,
                                  prior_weight=config.prior_weight,
                                  convergence_tol=config.convergence_tol,
                                  damping_init=config.damping_init)
            state = fit_photometric(model, i1, landmarks, cfg_photo, state,
                                    albedo=albedo)
        if not np.isfinite(state.costs["total"]):
            raise StageError(f"stage2: fit diverged, trace={state.trace}")

        mesh = evaluate_geometry(model, state.coeffs)
        if albedo is not None:
            mesh.albedo = albedo
        raster = rasterize(mesh, state.pose, state.gamma, width, height)
        pred_landmarks = project_landmarks(model, state.coeffs, state.pose,
                                           width, height)

        imageio.write_manifest(writer.path("fit_manifest.txt"),
                               _state_to_manifest(state))
        imageio.write_landmarks(writer.path("landmarks_fit.txt"), pred_landmarks)
        imageio.write_depth(writer.path("depth_base.pgm"), raster.depth)

        residual = float(np.mean(np.abs(
            raster.intensity[raster.valid] - luminance(i1)[raster.valid]))) \
            if raster.valid.any() else None
        metrics = {"costs": {k: float(v) for k, v in state.costs.items()},
                   "iterations": len(state.trace),
                   "coverage_pixels": int(raster.valid.sum()),
                   "image_residual_mae": residual}
        _write_json(writer.path("fit_metrics.json"), metrics)
    except (ConfigError, StageError):
        writer.cleanup()
        raise
    except Exception as exc:
        writer.cleanup()
        raise StageError(f"stage2(fit): {exc}") from exc
    elapsed = time.perf_counter() - started
    log.info("fit done in %.2fs (cost %.6g)", elapsed, state.costs["total"])
    return {"metrics": metrics, "state": state, "elapsed": elapsed}


def run_detail(config: RunConfig) -> dict:
    """Detail layer on top of a fit: bump handling, detailed depth, meshes."""
    writer = _StageWriter(config.out_dir)
    started = time.perf_counter()
    try:
        manifest_path = Path(config.out_dir) / "fit_manifest.txt"
        if not manifest_path.exists():
            raise ConfigError("detail stage needs fit_manifest.txt; run fit first")
        state = state_from_manifest(manifest_path)
        model = load_model(config.model)
        albedo = np.loadtxt(config.albedo) if config.albedo else None

        completed_path = config.completed or str(Path(config.out_dir) / "completed.png")
        i1 = imageio.read_image(completed_path)
        height, width = i1.shape[:2]

        mask_path = Path(config.out_dir) / "mask.pgm"
        mask = imageio.read_mask(mask_path) if mask_path.exists() \
            else np.zeros((height, width), dtype=bool)

        mesh = evaluate_geometry(model, state.coeffs)
        if albedo is not None:
            mesh.albedo = albedo
        raster = rasterize(mesh, state.pose, state.gamma, width, height)
        base = raster.depth

        if config.delta_max == 0:
            bump = BumpMap.flat(BumpCodec(1.0, config.levels), base.valid)
        elif config.bump_gt:
            loaded = imageio.read_bump(config.bump_gt)
            values = np.where(loaded.valid & base.valid, loaded.values,
                              loaded.codec.encode_zero())
            bump = BumpMap(values, loaded.codec, base.valid.copy())
        else:
            codec = (BumpCodec(config.delta_max, config.levels)
                     if config.delta_max else default_codec(base, levels=config.levels))
            bump = BumpMap.flat(codec, base.valid)

        # completion and bump data right at the mask boundary are not
        # trustworthy; refill a slightly dilated region
        if mask.any() and config.extrapolation_margin > 0:
            fill_mask = ndimage.binary_dilation(
                mask, iterations=config.extrapolation_margin)
        else:
            fill_mask = mask
        bump_used = extrapolate_bump(bump, fill_mask) if fill_mask.any() else bump
        detailed = apply_bump(bump_used, base)

        mesh_base = depth_to_mesh(base, state.pose)
        mesh_detailed = depth_to_mesh(detailed, state.pose)

        imageio.write_bump(writer.path("bump_used.pgm"), bump_used)
        imageio.write_depth(writer.path("depth_detailed.pgm"), detailed)
        imageio.write_obj(writer.path("mesh_base.obj"), mesh_base)
        imageio.write_obj(writer.path("mesh_detailed.obj"), mesh_detailed)

        metrics: dict = {
            "bump_pixels": int(bump_used.valid.sum()),
            "bump_extrapolated_pixels": int((mask & bump_used.valid).sum()),
            "delta_max": bump_used.codec.delta_max,
        }
        if config.gt_depth:
            gt = imageio.read_depth(config.gt_depth)
            common = gt.valid & detailed.valid
            inside = common & mask
            outside = common & ~mask
            if outside.any():
                metrics["depth_rmse_out_mm"] = float(np.sqrt(np.mean(
                    (detailed.depth[outside] - gt.depth[outside]) ** 2)))
            if inside.any():
                metrics["depth_rmse_in_mm"] = float(np.sqrt(np.mean(
                    (detailed.depth[inside] - gt.depth[inside]) ** 2)))
        _write_json(writer.path("detail_metrics.json"), metrics)
    except (ConfigError, StageError):
        writer.cleanup()
        raise
    except Exception as exc:
        writer.cleanup()
        raise StageError(f"stage2(detail): {exc}") from exc
    elapsed = time.perf_counter() - started
    log.info("detail done in %.2fs", elapsed)
    return {"metrics": metrics, "elapsed": elapsed}


def run_stage2(config: RunConfig) -> dict:
    fit_result = run_fit(config)
    detail_result = run_detail(config)
    return {"fit": fit_result, "detail": detail_result,
            "elapsed": fit_result["elapsed"] + detail_result["elapsed"]}


def run_all(config: RunConfig) -> dict:
    """Both stages plus consolidated metrics.json (runtimes go to stdout)."""
    stage1 = run_stage1(config)
    stage2 = run_stage2(config)
    consolidated = {
        "seed": config.seed,
        "stage1": stage1["metrics"],
        "fit": stage2["fit"]["metrics"],
        "detail": stage2["detail"]["metrics"],
    }
    _write_json(Path(config.out_dir) / "metrics.json", consolidated)
    rows = [("stage1", stage1["elapsed"]),
            ("fit", stage2["fit"]["elapsed"]),
            ("detail", stage2["detail"]["elapsed"])]
    print(f"{'stage':<10}{'seconds':>10}")
    for name, secs in rows:
        print(f"{name:<10}{secs:>10.2f}")
    return consolidated
