"""Software z-buffer rasterizer producing depth, normals and shaded intensity.

Coverage rule (normative): pixels sample at centers (x+0.5, y+0.5). After
orienting each projected triangle to positive doubled area in (u, v) space
(v grows down), a center is covered when every directed-edge function is
positive, or zero on a top edge (horizontal, pointing +u) or a left edge
(pointing -v). Nearest depth wins; ties within 1e-12 go to the lower
triangle index. No anti-aliasing, no perspective correction.

The scan loop is compiled with numba; rasterization of identical inputs is
bit-deterministic (sequential triangle order, no fastmath).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .camera import CameraPose, project, rotation_from_euler
from .illumination import SHCoefficients, shade
from .morphable import Mesh, vertex_normals

DEPTH_SENTINEL = 0.0
TRI_SENTINEL = -1
Z_TIE_EPS = 1e-12


@dataclass
class DepthMap:
    """Per-pixel camera-axis depth in mm with a validity mask.

    Invalid pixels hold the sentinel 0.0 so downstream arithmetic never
    sees NaN; ``valid`` is the authoritative coverage channel.
    """

    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.depth.shape != self.valid.shape or self.depth.ndim != 2:
            raise ValueError("depth and valid must be matching 2-D arrays")
        if np.any(~np.isfinite(self.depth[self.valid])):
            raise ValueError("valid depths must be finite")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass
class RasterOutput:
    """Depth plus per-pixel unit normals, shaded intensity, interpolated
    albedo and the winning triangle index."""

    depth: DepthMap
    normals: np.ndarray
    intensity: np.ndarray
    albedo: np.ndarray
    triangle_id: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return self.depth.valid


@njit(cache=True)
def _covers(e: float, dx: float, dy: float) -> bool:
    if e > 0.0:
        return True
    if e < 0.0:
        return False
    return dy < 0.0 or (dy == 0.0 and dx > 0.0)


@njit(cache=True)
def _scan_triangles(uv, depth_v, vnorm, alb, tris, height, width,
                    zbuf, tri_id, nrm, alb_buf):
    for ti in range(tris.shape[0]):
        i0 = tris[ti, 0]
        i1 = tris[ti, 1]
        i2 = tris[ti, 2]
        ax, ay = uv[i0, 0], uv[i0, 1]
        bx, by = uv[i1, 0], uv[i1, 1]
        cx, cy = uv[i2, 0], uv[i2, 1]
        area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area2 < 0.0:
            i1, i2 = i2, i1
            tx, ty = bx, by
            bx, by = cx, cy
            cx, cy = tx, ty
            area2 = -area2
        if area2 == 0.0:
            continue

        xmin = int(math.floor(min(ax, bx, cx) - 0.5))
        xmax = int(math.ceil(max(ax, bx, cx) - 0.5))
        ymin = int(math.floor(min(ay, by, cy) - 0.5))
        ymax = int(math.ceil(max(ay, by, cy) - 0.5))
        if xmin < 0:
            xmin = 0
        if ymin < 0:
            ymin = 0
        if xmax > width - 1:
            xmax = width - 1
        if ymax > height - 1:
            ymax = height - 1

        for row in range(ymin, ymax + 1):
            py = row + 0.5
            for col in range(xmin, xmax + 1):
                px = col + 0.5
                e0 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
                if not _covers(e0, cx - bx, cy - by):
                    continue
                e1 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
                if not _covers(e1, ax - cx, ay - cy):
                    continue
                e2 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                if not _covers(e2, bx - ax, by - ay):
                    continue
                w0 = e0 / area2
                w1 = e1 / area2
                w2 = e2 / area2
                z = w0 * depth_v[i0] + w1 * depth_v[i1] + w2 * depth_v[i2]
                if z < zbuf[row, col] - Z_TIE_EPS:
                    zbuf[row, col] = z
                    tri_id[row, col] = ti
                    for k in range(3):
                        nrm[row, col, k] = (w0 * vnorm[i0, k]
                                            + w1 * vnorm[i1, k]
                                            + w2 * vnorm[i2, k])
                    alb_buf[row, col] = (w0 * alb[i0] + w1 * alb[i1]
                                         + w2 * alb[i2])


def rasterize(mesh: Mesh, pose: CameraPose, gamma: SHCoefficients,
              width: int, height: int) -> RasterOutput:
    """Render a mesh into depth / normal / intensity buffers.

    Vertex normals are computed on the input mesh when absent, rotated to
    camera space, interpolated barycentrically and renormalized per pixel.
    Intensity is SH shading of the interpolated albedo (default 1.0).
    Degenerate projected triangles are skipped.
    """
    if mesh.triangles.shape[0] < 1:
        raise ValueError("mesh has no triangles")
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be at least 1x1")

    uv, depth_v = project(pose, mesh.vertices, width, height)
    if mesh.normals is not None:
        vnorm = mesh.normals
    else:
        vnorm, _ = vertex_normals(mesh)
    rmat = rotation_from_euler(pose.r)
    vnorm_cam = vnorm @ rmat.T
    alb = mesh.albedo if mesh.albedo is not None else np.ones(mesh.n_vertices)

    zbuf = np.full((height, width), np.inf)
    tri_id = np.full((height, width), TRI_SENTINEL, dtype=np.int32)
    nrm = np.zeros((height, width, 3))
    alb_buf = np.zeros((height, width))

    _scan_triangles(np.ascontiguousarray(uv),
                    np.ascontiguousarray(depth_v),
                    np.ascontiguousarray(vnorm_cam),
                    np.ascontiguousarray(alb, dtype=np.float64),
                    np.ascontiguousarray(mesh.triangles),
                    height, width, zbuf, tri_id, nrm, alb_buf)

    valid = tri_id != TRI_SENTINEL
    depth = np.where(valid, zbuf, DEPTH_SENTINEL)

    lengths = np.linalg.norm(nrm, axis=2)
    ok = valid & (lengths > 1e-12)
    nrm[ok] /= lengths[ok, None]
    nrm[~ok] = 0.0

    intensity = np.zeros((height, width))
    if ok.any():
        intensity[ok] = shade(alb_buf[ok], nrm[ok], gamma)
    alb_buf[~valid] = 0.0

    return RasterOutput(DepthMap(depth, valid), nrm, intensity, alb_buf, tri_id)


def coverage_mask(raster: RasterOutput) -> np.ndarray:
    """Boolean (H, W) mask of pixels the face projects to."""
    return raster.depth.valid.copy()
