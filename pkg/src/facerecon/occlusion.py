"""Occlusion handling: mask derivation from a parsing map, hollow-out, and
image completion.

Images are float arrays in [0, 1], (H, W) or (H, W, 3). Parsing maps are
integer label arrays; the default label set is 0=background, 1=skin,
2=brows, 3=eyes, 4=nose, 5=lips, 6=hair, 7=occluder, with {6, 7} treated
as occluders. Occluder pixels only count when they fall inside the convex
hull of the 68 landmarks dilated by a margin (default 8 px): landmarks
decide where occlusion matters.
"""

from __future__ import annotations

import numpy as np

from . import imageio
from .inpaint import harmonic_fill

DEFAULT_OCCLUDER_LABELS = frozenset({6, 7})
DEFAULT_HULL_MARGIN = 8.0

LABELS = {
    "background": 0, "skin": 1, "brows": 2, "eyes": 3,
    "nose": 4, "lips": 5, "hair": 6, "occluder": 7,
}


def validate_image(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] not in (1, 3)):
        raise ValueError(f"image must be (H, W) or (H, W, 1|3), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image dimensions must be positive")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return img


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns hull vertices counter-clockwise
    in (u, v) with v down. Raises on degenerate (collinear) input."""
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    if pts.shape[0] < 3:
        raise ValueError("landmarks degenerate: fewer than 3 distinct points")
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(tuple(p))
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(tuple(p))
    hull = np.array(lower[:-1] + upper[:-1])
    if hull.shape[0] < 3:
        raise ValueError("landmarks degenerate: collinear, hull has no area")
    return hull


def hull_interior_mask(landmarks: np.ndarray, height: int, width: int,
                       margin: float = 0.0) -> np.ndarray:
    """Pixels whose centers lie in the landmark hull offset outward by
    ``margin`` (half-plane offsets, mitered corners)."""
    hull = convex_hull(landmarks)
    px = np.arange(width) + 0.5
    py = np.arange(height) + 0.5
    pxg, pyg = np.meshgrid(px, py)
    inside = np.ones((height, width), dtype=bool)
    m = hull.shape[0]
    for i in range(m):
        a = hull[i]
        b = hull[(i + 1) % m]
        d = b - a
        ln = np.hypot(d[0], d[1])
        # signed distance, positive outside for a CCW hull in v-down coords
        dist = ((pxg - a[0]) * d[1] - (pyg - a[1]) * d[0]) / ln
        inside &= dist <= margin
    return inside


def compute_occlusion_mask(parsing: np.ndarray, landmarks: np.ndarray,
                           occluder_labels=DEFAULT_OCCLUDER_LABELS,
                           margin: float = DEFAULT_HULL_MARGIN) -> np.ndarray:
    """Occluded = occluder-labeled pixels inside the dilated landmark hull."""
    parsing = np.asarray(parsing)
    if parsing.ndim != 2:
        raise ValueError("parsing map must be 2-D")
    landmarks = np.asarray(landmarks, dtype=np.float64).reshape(-1, 2)
    if not np.all(np.isfinite(landmarks)):
        raise ValueError("landmark coordinates must be finite")
    h, w = parsing.shape
    occ = np.isin(parsing, list(occluder_labels))
    region = hull_interior_mask(landmarks, h, w, margin)
    return occ & region


def hollow_out(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero the masked pixels in every channel; idempotent."""
    img = validate_image(image)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not match image {img.shape[:2]}")
    out = img.copy()
    out[mask] = 0.0
    return out


def complete_baseline(inco: np.ndarray, mask: np.ndarray,
                      landmarks: np.ndarray | None = None) -> np.ndarray:
    """Deterministic completion: discrete-harmonic fill of the hole from
    its unmasked boundary, per channel. ``landmarks`` is accepted for
    interface parity with guided completion backends and is unused here.
    Unmasked pixels are returned bit-exact."""
    img = validate_image(inco)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not match image {img.shape[:2]}")
    if not mask.any():
        return img.copy()
    if img.ndim == 2:
        filled = harmonic_fill(img, mask)
    else:
        filled = img.copy()
        for c in range(img.shape[2]):
            filled[:, :, c] = harmonic_fill(img[:, :, c], mask)
    return np.clip(filled, 0.0, 1.0)


def load_external_completion(path, mask: np.ndarray, inco: np.ndarray) -> np.ndarray:
    """Use an externally completed image inside the mask only.

    Unmasked pixels are forced back to ``inco`` so completion can never
    touch observed content."""
    img = validate_image(inco)
    mask = np.asarray(mask, dtype=bool)
    ext = imageio.read_image(path)
    if ext.shape != img.shape:
        raise ValueError(f"external completion shape {ext.shape} "
                         f"does not match input {img.shape}")
    out = img.copy()
    out[mask] = ext[mask]
    return out
