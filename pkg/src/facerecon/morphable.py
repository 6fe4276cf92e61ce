"""Linear morphable face model: mean shape plus identity and expression bases.

A face shape is a length-3N vector (x0, y0, z0, x1, ...) in millimeters.
Identity offsets are columns of ``shape_basis`` weighted by ``alpha``;
expression offsets are columns of ``expr_basis`` weighted by ``beta``.
All evaluation functions are pure; the model is immutable after load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"OFMM1"
NUM_LANDMARKS = 68


class ModelFormatError(ValueError):
    """Raised when a model container fails structural validation."""


@dataclass
class MorphableModel:
    """Mean shape, linear bases, topology and landmark indexing.

    Attributes:
        mean_shape: (3N,) float64, millimeters, interleaved xyz.
        shape_basis: (3N, K_id) float64 identity modes.
        expr_basis: (3N, K_exp) float64 expression modes.
        triangles: (T, 3) int vertex indices.
        landmark_indices: (68,) int vertex indices.
        shape_sigma: (K_id,) positive per-mode standard deviations.
        expr_sigma: (K_exp,) positive per-mode standard deviations.
    """

    mean_shape: np.ndarray
    shape_basis: np.ndarray
    expr_basis: np.ndarray
    triangles: np.ndarray
    landmark_indices: np.ndarray
    shape_sigma: np.ndarray
    expr_sigma: np.ndarray

    def __post_init__(self):
        self.mean_shape = np.asarray(self.mean_shape, dtype=np.float64).ravel()
        self.shape_basis = np.asarray(self.shape_basis, dtype=np.float64)
        self.expr_basis = np.asarray(self.expr_basis, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.landmark_indices = np.asarray(self.landmark_indices, dtype=np.int64).ravel()
        self.shape_sigma = np.asarray(self.shape_sigma, dtype=np.float64).ravel()
        self.expr_sigma = np.asarray(self.expr_sigma, dtype=np.float64).ravel()
        self.validate()

    @property
    def n_vertices(self) -> int:
        return self.mean_shape.size // 3

    @property
    def k_id(self) -> int:
        return self.shape_basis.shape[1]

    @property
    def k_exp(self) -> int:
        return self.expr_basis.shape[1]

    def validate(self):
        n3 = self.mean_shape.size
        if n3 % 3 != 0 or n3 < 9:
            raise ModelFormatError(f"mean_shape: length {n3} is not 3*N with N >= 3")
        n = n3 // 3
        if self.shape_basis.ndim != 2 or self.shape_basis.shape[0] != n3:
            raise ModelFormatError(f"shape_basis: expected ({n3}, K_id), got {self.shape_basis.shape}")
        if self.expr_basis.ndim != 2 or self.expr_basis.shape[0] != n3:
            raise ModelFormatError(f"expr_basis: expected ({n3}, K_exp), got {self.expr_basis.shape}")
        if self.k_id < 1 or self.k_exp < 1:
            raise ModelFormatError("shape_basis/expr_basis: need at least one mode each")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3 or self.triangles.shape[0] < 1:
            raise ModelFormatError(f"triangles: expected (T >= 1, 3), got {self.triangles.shape}")
        if self.triangles.min(initial=0) < 0 or self.triangles.max(initial=0) >= n:
            raise ModelFormatError("triangles: vertex index out of range")
        t = self.triangles
        if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise ModelFormatError("triangles: triangle repeats a vertex")
        if self.landmark_indices.size != NUM_LANDMARKS:
            raise ModelFormatError(f"landmark_indices: expected {NUM_LANDMARKS}, got {self.landmark_indices.size}")
        if self.landmark_indices.min() < 0 or self.landmark_indices.max() >= n:
            raise ModelFormatError("landmark_indices: vertex index out of range")
        if self.shape_sigma.size != self.k_id or np.any(self.shape_sigma <= 0):
            raise ModelFormatError("shape_sigma: need K_id strictly positive values")
        if self.expr_sigma.size != self.k_exp or np.any(self.expr_sigma <= 0):
            raise ModelFormatError("expr_sigma: need K_exp strictly positive values")


@dataclass
class CoefficientVector:
    """Identity (alpha) and expression (beta) weights for one face."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64).ravel()
        self.beta = np.asarray(self.beta, dtype=np.float64).ravel()

    @classmethod
    def zeros(cls, model: MorphableModel) -> "CoefficientVector":
        return cls(np.zeros(model.k_id), np.zeros(model.k_exp))


@dataclass
class Mesh:
    """Triangle mesh in millimeters; normals and albedo are optional."""

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None
    albedo: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if self.albedo is not None:
            self.albedo = np.asarray(self.albedo, dtype=np.float64).ravel()

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]


def load_model(path) -> MorphableModel:
    """Read a model container (see ``save_model`` for the layout)."""
    path = Path(path)
    if not path.is_file():
        raise ModelFormatError(f"model file not found: {path}")
    data = path.read_bytes()
    if len(data) < len(MAGIC) + 16 or data[: len(MAGIC)] != MAGIC:
        raise ModelFormatError("header: bad magic, not a model container")
    n, k_id, k_exp, t = struct.unpack_from("<4I", data, len(MAGIC))
    offset = len(MAGIC) + 16

    def take(count: int, dtype, name: str) -> np.ndarray:
        nonlocal offset
        nbytes = count * np.dtype(dtype).itemsize
        if offset + nbytes > len(data):
            raise ModelFormatError(f"{name}: payload truncated")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        offset += nbytes
        return arr

    mean = take(3 * n, "<f8", "mean_shape")
    shape_basis = take(3 * n * k_id, "<f8", "shape_basis").reshape(3 * n, k_id, order="F")
    expr_basis = take(3 * n * k_exp, "<f8", "expr_basis").reshape(3 * n, k_exp, order="F")
    shape_sigma = take(k_id, "<f8", "shape_sigma")
    expr_sigma = take(k_exp, "<f8", "expr_sigma")
    triangles = take(3 * t, "<u4", "triangles").reshape(t, 3).astype(np.int64)
    landmarks = take(NUM_LANDMARKS, "<u4", "landmark_indices").astype(np.int64)
    if offset != len(data):
        raise ModelFormatError(f"payload: {len(data) - offset} trailing bytes")
    return MorphableModel(mean, shape_basis, expr_basis, triangles, landmarks,
                          shape_sigma, expr_sigma)


def save_model(model: MorphableModel, path) -> None:
    """Write the binary container: "OFMM1", u32 N/K_id/K_exp/T, then
    little-endian float64 payloads (mean, bases column-major, sigmas),
    u32 triangle indices row-major, u32 landmark indices."""
    parts = [
        MAGIC,
        struct.pack("<4I", model.n_vertices, model.k_id, model.k_exp,
                    model.triangles.shape[0]),
        model.mean_shape.astype("<f8").tobytes(),
        np.asfortranarray(model.shape_basis.astype("<f8")).tobytes(order="F"),
        np.asfortranarray(model.expr_basis.astype("<f8")).tobytes(order="F"),
        model.shape_sigma.astype("<f8").tobytes(),
        model.expr_sigma.astype("<f8").tobytes(),
        model.triangles.astype("<u4").tobytes(),
        model.landmark_indices.astype("<u4").tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


def evaluate_shape(model: MorphableModel, alpha: np.ndarray) -> np.ndarray:
    """Mean shape plus identity offsets, as a length-3N vector."""
    alpha = np.asarray(alpha, dtype=np.float64).ravel()
    if alpha.size != model.k_id:
        raise ValueError(f"alpha has {alpha.size} entries, model has {model.k_id} identity modes")
    return model.mean_shape + model.shape_basis @ alpha


def evaluate_expression(model: MorphableModel, beta: np.ndarray) -> np.ndarray:
    """Expression offset (no mean term); zero beta gives the zero vector."""
    beta = np.asarray(beta, dtype=np.float64).ravel()
    if beta.size != model.k_exp:
        raise ValueError(f"beta has {beta.size} entries, model has {model.k_exp} expression modes")
    return model.expr_basis @ beta


def evaluate_geometry(model: MorphableModel, coeffs: CoefficientVector) -> Mesh:
    """Compose identity and expression terms into a mesh with model topology."""
    flat = evaluate_shape(model, coeffs.alpha) + evaluate_expression(model, coeffs.beta)
    return Mesh(flat.reshape(-1, 3), model.triangles)


def vertex_normals(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Area-weighted per-vertex unit normals.

    Returns (normals, valid): rows of ``normals`` are unit length where
    ``valid`` is true; vertices whose incident triangles are all degenerate
    (or that have no incident triangle) get a zero row and valid=False,
    never NaN.
    """
    if mesh.triangles.shape[0] < 1:
        raise ValueError("mesh has no triangles")
    v = mesh.vertices
    t = mesh.triangles
    # cross product of two edges has magnitude 2*area, direction = face normal
    face_n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    acc = np.zeros_like(v)
    for k in range(3):
        np.add.at(acc, t[:, k], face_n)
    norms = np.linalg.norm(acc, axis=1)
    valid = norms > 1e-14
    out = np.zeros_like(acc)
    out[valid] = acc[valid] / norms[valid, None]
    return out, valid


def landmark_positions(mesh: Mesh, model: MorphableModel) -> np.ndarray:
    """(68, 3) vertex positions at the model's landmark indices, in order."""
    return mesh.vertices[model.landmark_indices]
