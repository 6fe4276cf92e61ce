"""Synthetic scenes with exact ground truth for every pipeline stage.

A procedural face-like surface (drawn on a UV grid: dome, nose bump) plays
the role of a statistical face model; smooth seeded harmonics form the
identity and expression bases. Scenes sample coefficients, pose and
illumination from a single seeded generator, render the clean image,
composite a synthetic occluder into both the image and the parsing map
(label 7), and synthesize a band-limited ground-truth bump map. Every
artifact regenerates bit-exactly from the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imageio
from .bump import BumpCodec, BumpMap, apply_bump, DEFAULT_DELTA_FRACTION
from .camera import CameraPose, project_landmarks, rotation_from_euler
from .illumination import SHCoefficients, sh_basis, shade
from .losses import geo_loss, pixel_loss, style_loss, synthesis_loss
from .morphable import (CoefficientVector, MorphableModel, evaluate_geometry,
                        vertex_normals)
from .occlusion import hull_interior_mask
from .rasterizer import DepthMap, rasterize

GRID_U = 25
GRID_V = 20
FACE_HALF_WIDTH_MM = 60.0
FACE_HALF_HEIGHT_MM = 80.0
FACE_DISTANCE_MM = 155.0

OCCLUDER_LABEL = 7
SKIN_LABEL = 1


def _landmark_template() -> np.ndarray:
    """68 canonical (u, v) positions on the [-1, 1]^2 face chart."""
    pts = []
    t = np.linspace(-1.0, 1.0, 17)  # jaw, ear to ear through the chin
    pts += [(0.85 * math.sin(ti * math.pi / 2),
             0.1 - 1.0 * math.cos(ti * math.pi / 2)) for ti in t]
    for side in (-1.0, 1.0):  # brows
        for u in np.linspace(0.15, 0.65, 5):
            pts.append((side * u, 0.45))
    for v in np.linspace(0.35, 0.05, 4):  # nose bridge
        pts.append((0.0, v))
    for u in np.linspace(-0.18, 0.18, 5):  # nose base
        pts.append((u, -0.08))
    for cx in (-0.38, 0.38):  # eyes, 6 points each
        for k in range(6):
            ang = math.pi * k / 3.0
            pts.append((cx + 0.11 * math.cos(ang), 0.26 + 0.06 * math.sin(ang)))
    for k in range(12):  # outer mouth
        ang = 2 * math.pi * k / 12.0
        pts.append((0.30 * math.cos(ang), -0.45 + 0.13 * math.sin(ang)))
    for k in range(8):  # inner mouth
        ang = 2 * math.pi * k / 8.0
        pts.append((0.17 * math.cos(ang), -0.45 + 0.05 * math.sin(ang)))
    out = np.array(pts, dtype=np.float64)
    assert out.shape == (68, 2)
    return out


def _smooth_field(rng: np.random.Generator, uu: np.ndarray, vv: np.ndarray,
                  n_terms: int = 4, max_order: int = 3) -> np.ndarray:
    """Band-limited random scalar field over the chart."""
    field = np.zeros_like(uu)
    for _ in range(n_terms):
        p = rng.integers(0, max_order + 1)
        q = rng.integers(0, max_order + 1)
        phase_u = rng.uniform(0, 2 * math.pi)
        phase_v = rng.uniform(0, 2 * math.pi)
        amp = rng.uniform(0.3, 1.0)
        field += amp * np.cos(p * math.pi * uu / 2 + phase_u) \
                     * np.cos(q * math.pi * vv / 2 + phase_v)
    return field


def make_synthetic_model(k_id: int = 10, k_exp: int = 5, seed: int = 7,
                         n_u: int = GRID_U, n_v: int = GRID_V) -> MorphableModel:
    """Procedural stand-in for a scanned face model (N = n_u * n_v)."""
    rng = np.random.default_rng(seed)
    u = np.linspace(-1.0, 1.0, n_u)
    v = np.linspace(-1.0, 1.0, n_v)
    uu, vv = np.meshgrid(u, v)  # vertex index = iv * n_u + iu

    dome = np.clip(1.0 - 0.55 * uu**2 - 0.38 * vv**2, 0.0, None)
    nose = 10.0 * np.exp(-((uu / 0.16) ** 2 + ((vv + 0.18) / 0.20) ** 2))
    zz = 42.0 * np.sqrt(dome) + nose - FACE_DISTANCE_MM

    verts = np.stack([FACE_HALF_WIDTH_MM * uu, FACE_HALF_HEIGHT_MM * vv, zz],
                     axis=-1).reshape(-1, 3)
    mean_shape = verts.reshape(-1)

    tris = []
    for iv in range(n_v - 1):
        for iu in range(n_u - 1):
            a = iv * n_u + iu
            b = a + 1
            c = a + n_u
            d = c + 1
            tris.append((a, b, d))  # CCW seen from +z (the camera side)
            tris.append((a, d, c))
    triangles = np.array(tris, dtype=np.int64)

    def basis(count: int, localize=None) -> np.ndarray:
        cols = []
        for _ in range(count):
            fld = np.stack([_smooth_field(rng, uu, vv) for _ in range(3)], axis=-1)
            if localize is not None:
                fld = fld * localize[:, :, None]
            col = fld.reshape(-1)
            col = col / max(np.sqrt(np.mean(col**2)), 1e-12)  # unit RMS, mm
            cols.append(col)
        return np.stack(cols, axis=1)

    shape_basis = basis(k_id)
    mouth = np.exp(-((uu / 0.55) ** 2 + ((vv + 0.45) / 0.45) ** 2))
    expr_basis = basis(k_exp, localize=0.3 + 0.7 * mouth)

    shape_sigma = 3.0 * 0.85 ** np.arange(k_id)
    expr_sigma = 1.2 * 0.9 ** np.arange(k_exp)

    template = _landmark_template()
    grid_pts = np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1)
    used: set[int] = set()
    lmk_idx = []
    for tu, tv in template:
        d2 = (grid_pts[:, 0] - tu) ** 2 + (grid_pts[:, 1] - tv) ** 2
        for cand in np.argsort(d2):
            if int(cand) not in used:
                used.add(int(cand))
                lmk_idx.append(int(cand))
                break
    landmark_indices = np.array(lmk_idx, dtype=np.int64)

    return MorphableModel(mean_shape, shape_basis, expr_basis, triangles,
                          landmark_indices, shape_sigma, expr_sigma)


def make_albedo(model: MorphableModel, seed: int = 7) -> np.ndarray:
    """Smooth per-vertex reflectance: vertical gradient plus seeded
    low-frequency variation, clipped to [0.25, 0.9]."""
    rng = np.random.default_rng(seed + 1000)
    verts = model.mean_shape.reshape(-1, 3)
    vn = verts[:, 1] / FACE_HALF_HEIGHT_MM
    un = verts[:, 0] / FACE_HALF_WIDTH_MM
    a = 0.55 + 0.08 * vn
    for _ in range(3):
        fu = rng.uniform(0.5, 1.5)
        fv = rng.uniform(0.5, 1.5)
        ph = rng.uniform(0, 2 * math.pi)
        a = a + 0.06 * np.cos(math.pi * (fu * un + fv * vn) + ph)
    return np.clip(a, 0.25, 0.9)


@dataclass
class SyntheticScene:
    """Ground-truth bundle for one rendered scene."""

    seed: int
    difficulty: str
    width: int
    height: int
    model: MorphableModel
    albedo: np.ndarray
    coeffs: CoefficientVector
    pose: CameraPose
    gamma: SHCoefficients
    clean: np.ndarray
    occluded: np.ndarray
    parsing: np.ndarray
    landmarks: np.ndarray
    depth_base: DepthMap
    codec: BumpCodec
    bump_gt: BumpMap
    depth_detailed: DepthMap
    occluder_mask: np.ndarray


def _sample_gamma(rng: np.random.Generator, normals_cam: np.ndarray,
                  albedo: np.ndarray) -> SHCoefficients:
    """Positive-ambient illumination with directional variation, scaled so
    vertex radiance stays strictly positive and intensity below 1."""
    direction = rng.standard_normal(8) * np.array(
        [0.35, 0.35, 0.35, 0.12, 0.12, 0.12, 0.12, 0.12])
    gamma = np.concatenate([[1.0], direction])
    basis = sh_basis(normals_cam)
    for _ in range(40):
        rad = basis @ gamma
        if rad.min() > 0.1 * rad.max():
            break
        gamma[1:] *= 0.7
    rad = basis @ gamma
    peak = float((albedo * rad).max())
    gamma *= rng.uniform(0.78, 0.88) / peak
    return SHCoefficients(gamma)


def generate_scene(model: MorphableModel, albedo: np.ndarray, seed: int,
                   difficulty: str = "none", width: int = 96,
                   height: int = 96,
                   delta_fraction: float = DEFAULT_DELTA_FRACTION) -> SyntheticScene:
    """Sample and render one fully known scene.

    difficulty selects the synthetic occluder: none, small or large
    (composited over the lower face, inside the landmark hull, into both
    the image and the parsing map).
    """
    if difficulty not in ("none", "small", "large"):
        raise ValueError(f"unknown difficulty {difficulty!r}")
    rng = np.random.default_rng(seed)

    alpha = rng.standard_normal(model.k_id) * model.shape_sigma * 0.8
    beta = rng.standard_normal(model.k_exp) * model.expr_sigma * 0.8
    coeffs = CoefficientVector(alpha, beta)

    deg = math.pi / 180.0
    r = np.array([rng.uniform(-20, 20) * deg,
                  rng.uniform(-20, 20) * deg,
                  rng.uniform(-8, 8) * deg])
    t = np.array([rng.uniform(-4, 4), rng.uniform(-4, 4), 0.0])
    s = 0.55 * min(width, height) / (2 * FACE_HALF_HEIGHT_MM) * rng.uniform(0.9, 1.1)
    pose = CameraPose(r, t, s)

    mesh = evaluate_geometry(model, coeffs)
    mesh.albedo = albedo
    normals, _ = vertex_normals(mesh)
    mesh.normals = normals
    gamma = _sample_gamma(rng, normals @ rotation_from_euler(r).T, albedo)

    raster = rasterize(mesh, pose, gamma, width, height)

    # ground-truth detail: band-limited displacement, amplitude <= delta/2
    coverage0 = raster.valid
    if coverage0.any():
        extent = float(raster.depth.depth[coverage0].max()
                       - raster.depth.depth[coverage0].min())
    else:
        extent = 0.0
    codec = BumpCodec(max(delta_fraction * extent, 0.1))
    disp = _band_limited_noise(rng, height, width, codec.delta_max / 2.0)

    # the observed image shows the detailed surface: shade with normals
    # perturbed by the displacement slope (bump shading), and shrink the
    # directional light until the image is strictly inside (0, 1) so
    # shading stays exactly linear in gamma
    clean = _bump_shaded_image(raster, disp, pose.s, gamma)
    for _ in range(20):
        inten = clean[raster.valid]
        if inten.size == 0 or (inten.min() > 0.0 and inten.max() < 1.0):
            break
        g = gamma.gamma.copy()
        g[1:] *= 0.7
        gamma = SHCoefficients(g)
        raster = rasterize(mesh, pose, gamma, width, height)
        clean = _bump_shaded_image(raster, disp, pose.s, gamma)
    depth_base = raster.depth
    coverage = raster.valid
    landmarks = project_landmarks(model, coeffs, pose, width, height)

    parsing = np.zeros((height, width), dtype=np.uint8)
    parsing[coverage] = SKIN_LABEL

    occluder = np.zeros((height, width), dtype=bool)
    occluded = clean.copy()
    if difficulty != "none":
        occluder = _make_occluder(rng, landmarks, height, width, difficulty)
        parsing[occluder] = OCCLUDER_LABEL
        color = rng.uniform(0.15, 0.85)
        noise = rng.uniform(-0.05, 0.05, size=(height, width))
        occluded[occluder] = np.clip(color + noise[occluder], 0.0, 1.0)

    bump_values = np.full((height, width), codec.encode_zero())
    bump_values[coverage] = codec.encode(disp[coverage])
    bump_gt = BumpMap(bump_values, codec, coverage.copy())
    depth_detailed = apply_bump(bump_gt, depth_base)

    return SyntheticScene(seed=seed, difficulty=difficulty, width=width,
                          height=height, model=model, albedo=albedo,
                          coeffs=coeffs, pose=pose, gamma=gamma, clean=clean,
                          occluded=occluded, parsing=parsing,
                          landmarks=landmarks, depth_base=depth_base,
                          codec=codec, bump_gt=bump_gt,
                          depth_detailed=depth_detailed,
                          occluder_mask=occluder)


def _make_occluder(rng: np.random.Generator, landmarks: np.ndarray,
                   height: int, width: int, difficulty: str) -> np.ndarray:
    """Ellipse or rectangle over the lower face, clipped to the landmark
    hull so the occluder never leaves the face region."""
    hull = hull_interior_mask(landmarks, height, width, margin=0.0)
    lo = landmarks.min(axis=0)
    hi = landmarks.max(axis=0)
    bw, bh = hi - lo
    cx = landmarks[:, 0].mean() + rng.uniform(-0.04, 0.04) * bw
    cy = landmarks[:, 1].mean() + (0.18 + rng.uniform(-0.03, 0.03)) * bh
    if difficulty == "large":
        f = rng.uniform(0.60, 0.74)
    else:
        f = rng.uniform(0.26, 0.34)
    rx = f * bw / 2.0
    ry = f * bh / 2.0
    shape = rng.choice(["ellipse", "rectangle"])
    py, px = np.mgrid[0:height, 0:width]
    pu = px + 0.5
    pv = py + 0.5
    if shape == "ellipse":
        inside = ((pu - cx) / rx) ** 2 + ((pv - cy) / ry) ** 2 <= 1.0
    else:
        rx *= 0.886  # area parity with the ellipse
        ry *= 0.886
        inside = (np.abs(pu - cx) <= rx) & (np.abs(pv - cy) <= ry)
    return inside & hull


def _bump_shaded_image(raster, disp: np.ndarray, scale: float,
                       gamma: SHCoefficients) -> np.ndarray:
    """Shade the rendered surface with normals tilted by the displacement
    slope, so the image shows the detailed geometry the way bump mapping
    does. ``disp`` is the per-pixel view-axis displacement in mm."""
    gv, gu = np.gradient(disp)  # mm per pixel along rows (v) and columns (u)
    gx = gu * scale             # x_cam = (u - W/2)/s
    gy = -gv * scale            # y_cam = (H/2 - v)/s
    n = raster.normals
    nz = np.clip(n[..., 2], 0.25, None)
    tilt = np.empty_like(n)
    tilt[..., 0] = n[..., 0] / nz + gx
    tilt[..., 1] = n[..., 1] / nz + gy
    tilt[..., 2] = 1.0
    tilt /= np.linalg.norm(tilt, axis=-1)[..., None]
    out = np.zeros(disp.shape)
    valid = raster.valid
    out[valid] = shade(raster.albedo[valid], tilt[valid], gamma)
    return out


def _band_limited_noise(rng: np.random.Generator, height: int, width: int,
                        amplitude: float, n_waves: int = 8) -> np.ndarray:
    """Sum of seeded sinusoids; |result| <= amplitude everywhere."""
    py, px = np.mgrid[0:height, 0:width]
    raw_amps = rng.uniform(0.5, 1.0, n_waves)
    raw_amps *= amplitude * rng.uniform(0.85, 1.0) / raw_amps.sum()
    disp = np.zeros((height, width))
    for k in range(n_waves):
        wavelength = rng.uniform(7.0, 20.0)
        ang = rng.uniform(0, 2 * math.pi)
        phase = rng.uniform(0, 2 * math.pi)
        fx = math.cos(ang) / wavelength
        fy = math.sin(ang) / wavelength
        disp += raw_amps[k] * np.sin(2 * math.pi * (fx * px + fy * py) + phase)
    return disp


# ---------------------------------------------------------------------------
# scene persistence


def write_scene(scene: SyntheticScene, directory) -> None:
    """Write the scene directory layout (image.png, clean.png, parsing.pgm,
    landmarks.txt, depth/bump maps with sidecars, manifest.txt, albedo.txt)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    imageio.write_image(d / "image.png", scene.occluded)
    imageio.write_image(d / "clean.png", scene.clean)
    imageio.write_parsing_map(d / "parsing.pgm", scene.parsing)
    imageio.write_landmarks(d / "landmarks.txt", scene.landmarks)
    imageio.write_depth(d / "depth_base.pgm", scene.depth_base)
    imageio.write_depth(d / "depth_detailed.pgm", scene.depth_detailed)
    imageio.write_bump(d / "bump_gt.pgm", scene.bump_gt)
    np.savetxt(d / "albedo.txt", scene.albedo, fmt="%.17g")
    imageio.write_manifest(d / "manifest.txt", {
        "seed": scene.seed,
        "difficulty": scene.difficulty,
        "width": scene.width,
        "height": scene.height,
        "alpha": scene.coeffs.alpha,
        "beta": scene.coeffs.beta,
        "pose_r": scene.pose.r,
        "pose_t": scene.pose.t,
        "pose_s": scene.pose.s,
        "gamma": scene.gamma.gamma,
        "delta_max": scene.codec.delta_max,
        "levels": scene.codec.levels,
    })


def score_scene(scene: SyntheticScene, out_dir) -> dict:
    """Compare pipeline artifacts in ``out_dir`` against the ground truth.

    Missing artifacts are listed instead of failing; present ones are
    scored: landmark RMSE (px), detailed-depth RMSE inside/outside the
    occlusion mask (mm), bump geometric loss, synthesis losses of the
    completed image against the clean one.
    """
    out = Path(out_dir)
    metrics: dict = {"missing": []}

    lmk_path = out / "landmarks_fit.txt"
    if lmk_path.exists():
        pred = imageio.read_landmarks(lmk_path)
        metrics["landmark_rmse_px"] = float(
            np.sqrt(np.mean(np.sum((pred - scene.landmarks) ** 2, axis=1))))
    else:
        metrics["missing"].append("landmarks_fit.txt")

    depth_path = out / "depth_detailed.pgm"
    if depth_path.exists():
        fit = imageio.read_depth(depth_path)
        gt = scene.depth_detailed
        common = fit.valid & gt.valid
        mask = scene.occluder_mask
        inside = common & mask
        outside = common & ~mask
        if inside.any():
            metrics["depth_rmse_in_mm"] = float(np.sqrt(np.mean(
                (fit.depth[inside] - gt.depth[inside]) ** 2)))
        if outside.any():
            metrics["depth_rmse_out_mm"] = float(np.sqrt(np.mean(
                (fit.depth[outside] - gt.depth[outside]) ** 2)))
        metrics["depth_common_pixels"] = int(common.sum())
    else:
        metrics["missing"].append("depth_detailed.pgm")

    bump_path = out / "bump_used.pgm"
    if bump_path.exists():
        bmp = imageio.read_bump(bump_path)
        metrics["bump_geo_loss"] = geo_loss(bmp.values, scene.bump_gt.values)
    else:
        metrics["missing"].append("bump_used.pgm")

    completed_path = out / "completed.png"
    if completed_path.exists() and scene.occluder_mask.any():
        i1 = imageio.read_image(completed_path)
        metrics["pixel_loss"] = pixel_loss(i1, scene.clean, scene.occluder_mask)
        metrics["style_loss"] = style_loss(i1, scene.clean, scene.occluder_mask)
        metrics["synthesis_loss"] = synthesis_loss(i1, scene.clean,
                                                   scene.occluder_mask)
    elif not completed_path.exists():
        metrics["missing"].append("completed.png")

    return metrics
