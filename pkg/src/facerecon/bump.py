"""Bump maps: encoded per-pixel displacement between detailed and base depth.

The codec maps a displacement d in [-delta_max, +delta_max] mm affinely to
[0, levels-1]; zero displacement lands exactly on the midpoint
(levels-1)/2. Values are kept as reals in memory and only quantized on
export. Non-face pixels always hold the zero encoding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraPose
from .inpaint import harmonic_fill
from .morphable import Mesh
from .rasterizer import DepthMap

DEFAULT_LEVELS = 256
# default displacement half-range as a fraction of the face depth extent
DEFAULT_DELTA_FRACTION = 0.02


@dataclass(frozen=True)
class BumpCodec:
    """Affine displacement codec: half-range in mm and quantization count."""

    delta_max: float
    levels: int = DEFAULT_LEVELS

    def __post_init__(self):
        if not (self.delta_max > 0):
            raise ValueError(f"delta_max must be positive, got {self.delta_max}")
        if self.levels < 2:
            raise ValueError(f"levels must be at least 2, got {self.levels}")

    def encode(self, displacement):
        """Clamped affine encoding; out-of-range displacements saturate."""
        d = np.asarray(displacement, dtype=np.float64)
        unit = np.clip((d + self.delta_max) / (2.0 * self.delta_max), 0.0, 1.0)
        out = unit * (self.levels - 1)
        return float(out) if np.isscalar(displacement) else out

    def decode(self, encoded):
        """Inverse of encode on [0, levels-1]; raises outside that range."""
        v = np.asarray(encoded, dtype=np.float64)
        if np.any(v < 0) or np.any(v > self.levels - 1):
            raise ValueError(f"encoded values outside [0, {self.levels - 1}]")
        out = (v / (self.levels - 1)) * 2.0 * self.delta_max - self.delta_max
        return float(out) if np.isscalar(encoded) else out

    def encode_zero(self) -> float:
        return (self.levels - 1) / 2.0


@dataclass
class BumpMap:
    """Encoded displacement image aligned with a depth map's valid mask."""

    values: np.ndarray
    codec: BumpCodec
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.shape != self.valid.shape or self.values.ndim != 2:
            raise ValueError("values and valid must be matching 2-D arrays")
        if np.any(self.values < 0) or np.any(self.values > self.codec.levels - 1):
            raise ValueError("bump values outside codec range")

    @classmethod
    def flat(cls, codec: BumpCodec, valid: np.ndarray) -> "BumpMap":
        """Zero-displacement map (the no-detail baseline)."""
        valid = np.asarray(valid, dtype=bool)
        return cls(np.full(valid.shape, codec.encode_zero()), codec, valid)


def compute_bump(codec: BumpCodec, detailed: DepthMap, base: DepthMap) -> BumpMap:
    """Encode detailed-minus-base depth where both are valid; the zero
    encoding elsewhere. The detailed map's coverage must not exceed the
    base map's."""
    if detailed.depth.shape != base.depth.shape:
        raise ValueError("depth map dimensions differ")
    if np.any(detailed.valid & ~base.valid):
        raise ValueError("detailed coverage exceeds base coverage")
    both = detailed.valid & base.valid
    values = np.full(base.depth.shape, codec.encode_zero())
    values[both] = codec.encode(detailed.depth[both] - base.depth[both])
    return BumpMap(values, codec, both)


def apply_bump(bump: BumpMap, base: DepthMap) -> DepthMap:
    """Detailed depth d + decode(bump) on valid pixels; invalid unchanged."""
    if bump.values.shape != base.depth.shape:
        raise ValueError("bump and depth dimensions differ")
    depth = base.depth.copy()
    use = base.valid & bump.valid
    depth[use] = base.depth[use] + bump.codec.decode(bump.values[use])
    return DepthMap(depth, base.valid.copy())


def extrapolate_bump(bump: BumpMap, mask: np.ndarray) -> BumpMap:
    """Replace bump values inside the mask by the discrete-harmonic fill
    from the surrounding bump values; used to hallucinate smooth detail in
    occluded regions."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != bump.values.shape:
        raise ValueError("mask and bump dimensions differ")
    hole = mask & bump.valid
    if not hole.any():
        return BumpMap(bump.values.copy(), bump.codec, bump.valid.copy())
    if not np.any(bump.valid & ~hole):
        raise ValueError("mask covers every valid bump pixel; nothing to extrapolate from")
    filled = harmonic_fill(bump.values, hole)
    filled = np.clip(filled, 0.0, bump.codec.levels - 1)
    return BumpMap(filled, bump.codec, bump.valid.copy())


def default_codec(base: DepthMap, fraction: float = DEFAULT_DELTA_FRACTION,
                  levels: int = DEFAULT_LEVELS) -> BumpCodec:
    """Codec with delta_max = fraction of the valid depth extent (floor 0.1 mm)."""
    if base.valid.any():
        extent = float(base.depth[base.valid].max() - base.depth[base.valid].min())
    else:
        extent = 0.0
    return BumpCodec(max(fraction * extent, 0.1), levels)


def depth_to_mesh(depth: DepthMap, pose: CameraPose, width: int | None = None,
                  height: int | None = None) -> Mesh:
    """Back-project a depth map to a camera-space surface mesh.

    Each valid pixel center maps through the inverse weak-perspective
    projection; every 2x2 block of valid pixels becomes two triangles.
    Raises when fewer than 3 pixels are valid or no complete quad exists.
    """
    h, w = depth.depth.shape
    valid = depth.valid
    n_valid = int(valid.sum())
    if n_valid < 3:
        raise ValueError(f"need at least 3 valid pixels, got {n_valid}")

    quad = valid[:-1, :-1] & valid[:-1, 1:] & valid[1:, :-1] & valid[1:, 1:]
    if not quad.any():
        raise ValueError("no complete 2x2 valid block; cannot triangulate")

    idx = -np.ones((h, w), dtype=np.int64)
    ys, xs = np.nonzero(valid)
    idx[ys, xs] = np.arange(n_valid)

    u = xs + 0.5
    v = ys + 0.5
    x = (u - w / 2.0) / pose.s
    y = (h / 2.0 - v) / pose.s
    z = -depth.depth[ys, xs]
    verts = np.stack([x, y, z], axis=1)

    qy, qx = np.nonzero(quad)
    i00 = idx[qy, qx]
    i01 = idx[qy, qx + 1]
    i10 = idx[qy + 1, qx]
    i11 = idx[qy + 1, qx + 1]
    # split each quad along the same diagonal; windings face the camera
    tris = np.concatenate([
        np.stack([i00, i10, i01], axis=1),
        np.stack([i01, i10, i11], axis=1),
    ])
    return Mesh(verts, tris)
