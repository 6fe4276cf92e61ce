"""Order-2 real spherical-harmonics irradiance, parameterized by gamma in R^9.

Basis ordering: Y00, Y1-1, Y10, Y11, Y2-2, Y2-1, Y20, Y21, Y22 in the
graphics convention (no Condon-Shortley phase). A single gray channel is
used: gamma weights apply to luminance, not per RGB channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# closed-form normalization constants
_C0 = 0.28209479177387814  # 0.5*sqrt(1/pi)
_C1 = 0.4886025119029199   # sqrt(3/(4 pi))
_C2 = 1.0925484305920792   # sqrt(15/(4 pi))
_C3 = 0.31539156525252005  # 0.25*sqrt(5/pi)
_C4 = 0.5462742152960396   # 0.25*sqrt(15/pi)

UNIT_TOL = 1e-6


@dataclass
class SHCoefficients:
    """Nine irradiance weights, order 0 through 2."""

    gamma: np.ndarray

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64).ravel()
        if self.gamma.size != 9:
            raise ValueError(f"gamma must have exactly 9 entries, got {self.gamma.size}")
        if not np.all(np.isfinite(self.gamma)):
            raise ValueError("gamma must be finite")

    @classmethod
    def zeros(cls) -> "SHCoefficients":
        return cls(np.zeros(9))


def sh_basis(normal: np.ndarray) -> np.ndarray:
    """Evaluate the 9 real SH basis functions at unit direction(s).

    Accepts (..., 3) and returns (..., 9). Raises if any input direction
    deviates from unit norm by more than 1e-6.
    """
    n = np.asarray(normal, dtype=np.float64)
    norms = np.linalg.norm(n, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise ValueError(f"sh_basis needs unit directions (worst |norm-1| = {worst:g})")
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    out = np.empty(n.shape[:-1] + (9,))
    out[..., 0] = _C0
    out[..., 1] = _C1 * y
    out[..., 2] = _C1 * z
    out[..., 3] = _C1 * x
    out[..., 4] = _C2 * x * y
    out[..., 5] = _C2 * y * z
    out[..., 6] = _C3 * (3.0 * z * z - 1.0)
    out[..., 7] = _C2 * x * z
    out[..., 8] = _C4 * (x * x - y * y)
    return out


def shade(albedo, normal, gamma: SHCoefficients):
    """Radiance albedo * max(0, gamma . basis(normal)); broadcasts over pixels."""
    radiance = sh_basis(normal) @ gamma.gamma
    return np.asarray(albedo) * np.maximum(radiance, 0.0)
