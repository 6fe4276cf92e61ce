"""Weak-perspective camera: Euler rotation, translation, uniform scale.

Conventions (normative for the whole package):
  - intrinsic X-Y-Z Euler angles (pitch, yaw, roll), column vectors,
    R = Rx(pitch) @ Ry(yaw) @ Rz(roll);
  - camera space is y-up and the camera looks along -z;
  - image u grows right, v grows down:  u = s*x' + W/2,  v = H/2 - s*y';
  - depth = -z', so depth grows away from the camera.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class CameraPose:
    """Rotation (3 Euler angles, radians), translation (mm), scale (px/mm)."""

    r: np.ndarray
    t: np.ndarray
    s: float

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.float64).ravel()
        self.t = np.asarray(self.t, dtype=np.float64).ravel()
        self.s = float(self.s)
        if self.r.size != 3 or self.t.size != 3:
            raise ValueError("pose needs 3 rotation angles and a 3-vector translation")
        if not np.all(np.isfinite(self.r)) or not np.all(np.isfinite(self.t)):
            raise ValueError("pose parameters must be finite")
        if not (self.s > 0):
            raise ValueError(f"scale must be positive, got {self.s}")

    @classmethod
    def identity(cls, s: float = 1.0) -> "CameraPose":
        return cls(np.zeros(3), np.zeros(3), s)


def rotation_from_euler(r) -> np.ndarray:
    """3x3 rotation matrix for intrinsic X-Y-Z Euler angles."""
    a, b, c = np.asarray(r, dtype=np.float64).ravel()
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cc, sc = np.cos(c), np.sin(c)
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rz = np.array([[cc, -sc, 0], [sc, cc, 0], [0, 0, 1]])
    return rx @ ry @ rz


def transform_points(pose: CameraPose, points: np.ndarray) -> np.ndarray:
    """Apply p' = R p + t to an (N, 3) array of points."""
    rmat = rotation_from_euler(pose.r)
    return np.asarray(points, dtype=np.float64) @ rmat.T + pose.t


def project(pose: CameraPose, points: np.ndarray, width: int, height: int):
    """Weak-perspective projection of model-space points.

    Returns (uv, depth): uv is (N, 2) pixel coordinates, depth is (N,)
    camera-axis distance in mm. Points may land outside the image;
    callers clip.
    """
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be at least 1x1")
    cam = transform_points(pose, points)
    uv = np.empty((cam.shape[0], 2))
    uv[:, 0] = pose.s * cam[:, 0] + width / 2.0
    uv[:, 1] = height / 2.0 - pose.s * cam[:, 1]
    return uv, -cam[:, 2]


def project_landmarks(model, coeffs, pose: CameraPose, width: int, height: int) -> np.ndarray:
    """Project the model's 68 landmark vertices; returns (68, 2) pixels."""
    from . import morphable

    mesh = morphable.evaluate_geometry(model, coeffs)
    pts = morphable.landmark_positions(mesh, model)
    uv, _ = project(pose, pts, width, height)
    return uv
