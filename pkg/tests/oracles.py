"""Independent reference implementations used as test oracles.

Everything here deliberately avoids the code paths under test: dense
products run as explicit loops (numba-compiled when available), rotations
go through quaternions, spherical harmonics come from scipy's complex
harmonics, rasterization coverage from per-pixel barycentric solves.
"""

from __future__ import annotations

import numpy as np
from scipy.special import sph_harm_y

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None


# ---------------------------------------------------------------------------
# dense linear-model evaluation


def _shape_loops_py(mean, basis, coef):
    out = np.empty(mean.size)
    for row in range(mean.size):
        acc = mean[row]
        for k in range(coef.size):
            acc += basis[row, k] * coef[k]
        out[row] = acc
    return out


if njit is not None:
    _shape_loops = njit(cache=False)(_shape_loops_py)
else:  # pragma: no cover
    _shape_loops = _shape_loops_py


def dense_shape_eval(mean: np.ndarray, basis: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """Naive double-loop mean + basis @ coef."""
    return _shape_loops(np.ascontiguousarray(mean, dtype=np.float64),
                        np.ascontiguousarray(basis, dtype=np.float64),
                        np.ascontiguousarray(coef, dtype=np.float64))


# ---------------------------------------------------------------------------
# rotations via quaternions


def _quat_axis(angle: float, axis: int) -> np.ndarray:
    q = np.zeros(4)
    q[0] = np.cos(angle / 2.0)
    q[1 + axis] = np.sin(angle / 2.0)
    return q


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quaternion_rotation_matrix(angles) -> np.ndarray:
    """Rotation for intrinsic X-Y-Z Euler angles composed as quaternions."""
    a, b, c = angles
    q = _quat_mul(_quat_mul(_quat_axis(a, 0), _quat_axis(b, 1)), _quat_axis(c, 2))
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


# ---------------------------------------------------------------------------
# real spherical harmonics from scipy's complex harmonics


def sh_basis_reference(normal: np.ndarray) -> np.ndarray:
    """Real SH (graphics convention) via complex harmonics with the
    Condon-Shortley phase cancelled explicitly."""
    x, y, z = np.asarray(normal, dtype=np.float64)
    polar = np.arccos(np.clip(z, -1.0, 1.0))
    azimuth = np.arctan2(y, x)

    def real_lm(l, m):
        if m == 0:
            return float(sph_harm_y(l, 0, polar, azimuth).real)
        if m > 0:
            return float(np.sqrt(2.0) * (-1.0) ** m
                         * sph_harm_y(l, m, polar, azimuth).real)
        return float(np.sqrt(2.0) * (-1.0) ** m
                     * sph_harm_y(l, -m, polar, azimuth).imag)

    return np.array([real_lm(0, 0),
                     real_lm(1, -1), real_lm(1, 0), real_lm(1, 1),
                     real_lm(2, -2), real_lm(2, -1), real_lm(2, 0),
                     real_lm(2, 1), real_lm(2, 2)])


# ---------------------------------------------------------------------------
# rasterization: per-pixel barycentric coverage


def _edge_rule(e: float, dx: float, dy: float) -> bool:
    # same normative top-left convention, restated on barycentric output
    if e > 0:
        return True
    if e < 0:
        return False
    return dy < 0 or (dy == 0 and dx > 0)


def triangle_coverage_reference(tri_uv: np.ndarray, tri_depth: np.ndarray,
                                width: int, height: int):
    """Coverage and interpolated depth by solving the barycentric 2x2
    system at every pixel center in the image.

    Returns (cover, depth): (H, W) bool and float arrays.
    """
    a, b, c = [np.asarray(p, dtype=np.float64) for p in tri_uv]
    za, zb, zc = [float(v) for v in tri_depth]
    area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    if area2 < 0:
        b, c = c, b
        zb, zc = zc, zb
        area2 = -area2
    cover = np.zeros((height, width), dtype=bool)
    depth = np.zeros((height, width))
    if area2 == 0.0:
        return cover, depth
    mat = np.array([[b[0] - a[0], c[0] - a[0]],
                    [b[1] - a[1], c[1] - a[1]]])
    inv = np.linalg.inv(mat)
    for row in range(height):
        for col in range(width):
            p = np.array([col + 0.5, row + 0.5])
            wb, wc = inv @ (p - a)
            wa = 1.0 - wb - wc
            # edge weights scale barycentrics by area2; signs match
            ok = (_edge_rule(wa * area2, c[0] - b[0], c[1] - b[1])
                  and _edge_rule(wb * area2, a[0] - c[0], a[1] - c[1])
                  and _edge_rule(wc * area2, b[0] - a[0], b[1] - a[1]))
            if ok:
                cover[row, col] = True
                depth[row, col] = wa * za + wb * zb + wc * zc
    return cover, depth


# ---------------------------------------------------------------------------
# loss recomputation by naive loops


def lmk_loss_reference(pred: np.ndarray, gt: np.ndarray) -> float:
    total = 0.0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            total += (pred[i, j] - gt[i, j]) ** 2
    return total


def pixel_loss_reference(i1: np.ndarray, i0: np.ndarray, mask: np.ndarray) -> float:
    a = np.atleast_3d(i1)
    b = np.atleast_3d(i0)
    total = 0.0
    for r in range(a.shape[0]):
        for c in range(a.shape[1]):
            for ch in range(a.shape[2]):
                total += abs(a[r, c, ch] - b[r, c, ch])
    return total / (mask.sum() * a.shape[2])


def gram_reference(features: np.ndarray) -> np.ndarray:
    h, w, r = features.shape
    out = np.zeros((r, r))
    for i in range(r):
        for j in range(r):
            out[i, j] = float(np.sum(features[:, :, i] * features[:, :, j]))
    return out


def style_loss_reference(i1, i0, mask, extractor) -> float:
    """Recompose the style distance step by step from the feature stack."""
    m = np.asarray(mask, dtype=float)
    a = i1 * m if i1.ndim == 2 else i1 * m[:, :, None]
    b = i0 * m if i0.ndim == 2 else i0 * m[:, :, None]
    total = 0.0
    for fa, fb in zip(extractor.features(a), extractor.features(b)):
        hn, wn, rn = fa.shape
        ga = gram_reference(fa)
        gb = gram_reference(fb)
        acc = 0.0
        for i in range(rn):
            for j in range(rn):
                acc += abs((ga[i, j] - gb[i, j]) / (rn * hn * wn))
        total += acc / (rn * rn)
    return total


def geo_loss_reference(bump: np.ndarray, bump_gt: np.ndarray) -> float:
    h, w = bump.shape
    total = 0.0
    for r in range(h):
        for c in range(w):
            total += abs(bump[r, c] - bump_gt[r, c])
    for r in range(h):
        for c in range(w):
            gx_a = bump[r, c + 1] - bump[r, c] if c + 1 < w else 0.0
            gx_b = bump_gt[r, c + 1] - bump_gt[r, c] if c + 1 < w else 0.0
            total += abs(gx_a - gx_b)
    for r in range(h):
        for c in range(w):
            gy_a = bump[r + 1, c] - bump[r, c] if r + 1 < h else 0.0
            gy_b = bump_gt[r + 1, c] - bump_gt[r, c] if r + 1 < h else 0.0
            total += abs(gy_a - gy_b)
    return total


# ---------------------------------------------------------------------------
# geometry helpers


def point_to_triangle_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray,
                               c: np.ndarray) -> float:
    """Exact Euclidean distance from a point to a 3-D triangle."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0 and d2 <= 0:
        return float(np.linalg.norm(ap))
    bp = p - b
    d3 = ab @ bp
    d4 = ac @ bp
    if d3 >= 0 and d4 <= d3:
        return float(np.linalg.norm(bp))
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        t = d1 / (d1 - d3)
        return float(np.linalg.norm(ap - t * ab))
    cp = p - c
    d5 = ab @ cp
    d6 = ac @ cp
    if d6 >= 0 and d5 <= d6:
        return float(np.linalg.norm(cp))
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        t = d2 / (d2 - d6)
        return float(np.linalg.norm(ap - t * ac))
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return float(np.linalg.norm(bp - t * (c - b)))
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    closest = a + ab * v + ac * w
    return float(np.linalg.norm(p - closest))


def point_to_mesh_distance(p: np.ndarray, vertices: np.ndarray,
                           triangles: np.ndarray) -> float:
    best = np.inf
    for t in triangles:
        d = point_to_triangle_distance(p, vertices[t[0]], vertices[t[1]],
                                       vertices[t[2]])
        if d < best:
            best = d
    return best
