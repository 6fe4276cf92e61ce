"""File formats: PNG/PPM/PGM images, depth and bump maps with sidecars,
landmark text files, OBJ meshes, key=value manifests.

Images are exchanged as float arrays in [0, 1], shape (H, W) or (H, W, 3).
Parsing maps are uint8 label arrays. Masks are 8-bit PGM with 255=occluded.
Depth maps are 16-bit PGM (P5, maxval 65535, code 0 = invalid) plus a text
sidecar with the affine code-to-millimeter mapping. All writers are
byte-deterministic for identical inputs.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .morphable import Mesh
from .rasterizer import DepthMap

FLOAT_FMT = "%.17g"


def _fmt(x: float) -> str:
    return FLOAT_FMT % float(x)


# ---------------------------------------------------------------------------
# netpbm


def write_pgm(path, values: np.ndarray, maxval: int = 255) -> None:
    """Binary P5; values must already be integer codes in [0, maxval]."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError("PGM wants a 2-D array")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > maxval:
        raise ValueError(f"PGM codes out of range [0, {maxval}]")
    h, w = arr.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    dtype = ">u2" if maxval > 255 else "u1"
    Path(path).write_bytes(header + arr.astype(dtype).tobytes())


def write_ppm(path, values: np.ndarray) -> None:
    """Binary P6, 8-bit, from float values in [0, 1]."""
    arr = np.asarray(values)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("PPM wants an (H, W, 3) array")
    codes = np.clip(np.rint(arr * 255.0), 0, 255).astype("u1")
    h, w = codes.shape[:2]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + codes.tobytes())


def _read_pnm_header(data: bytes):
    # header tokens may be separated by whitespace and '#' comments
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PNM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    return tokens[0].decode("ascii"), int(tokens[1]), int(tokens[2]), int(tokens[3]), pos


def read_pnm(path) -> np.ndarray:
    """Read binary PGM (P5) or PPM (P6); returns integer code array."""
    data = Path(path).read_bytes()
    magic, w, h, maxval, pos = _read_pnm_header(data)
    if magic == "P5":
        count, shape = w * h, (h, w)
    elif magic == "P6":
        count, shape = w * h * 3, (h, w, 3)
    else:
        raise ValueError(f"unsupported PNM magic {magic!r}")
    dtype = ">u2" if maxval > 255 else "u1"
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    return arr.reshape(shape).astype(np.int64 if maxval > 255 else np.uint8)


# ---------------------------------------------------------------------------
# images


def write_image(path, values: np.ndarray) -> None:
    """Write a float image in [0, 1] as 8-bit PNG or binary PPM/PGM by suffix."""
    path = Path(path)
    arr = np.asarray(values, dtype=np.float64)
    codes = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    if path.suffix.lower() == ".png":
        PILImage.fromarray(codes).save(path, format="PNG")
    elif path.suffix.lower() == ".ppm":
        write_ppm(path, arr)
    elif path.suffix.lower() == ".pgm":
        write_pgm(path, codes)
    else:
        raise ValueError(f"unsupported image suffix: {path.suffix}")


def read_image(path) -> np.ndarray:
    """Read PNG/PPM/PGM into floats in [0, 1]; (H, W) gray or (H, W, 3)."""
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pgm"):
        codes = read_pnm(path)
        return codes.astype(np.float64) / 255.0
    with PILImage.open(path) as img:
        if img.mode in ("L", "I;16"):
            arr = np.asarray(img)
        elif img.mode in ("RGB",):
            arr = np.asarray(img)
        else:
            arr = np.asarray(img.convert("RGB"))
    if arr.dtype == np.uint16:
        return arr.astype(np.float64) / 65535.0
    return arr.astype(np.float64) / 255.0


def write_parsing_map(path, labels: np.ndarray) -> None:
    write_pgm(path, np.asarray(labels, dtype=np.int64), maxval=255)


def read_parsing_map(path) -> np.ndarray:
    arr = read_pnm(path)
    if arr.ndim != 2:
        raise ValueError("parsing map must be single channel")
    return arr.astype(np.uint8)


def write_mask(path, mask: np.ndarray) -> None:
    write_pgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0), maxval=255)


def read_mask(path) -> np.ndarray:
    arr = read_pnm(path)
    if arr.ndim != 2:
        raise ValueError("mask must be single channel")
    return arr >= 128


# ---------------------------------------------------------------------------
# depth / bump with sidecars


def write_depth(path, depth_map: DepthMap) -> None:
    """16-bit PGM plus ``<path>.txt`` sidecar.

    Valid depths map affinely to codes 1..65535; code 0 is the invalid
    sentinel. The sidecar records mm = offset + scale * (code - 1).
    """
    path = Path(path)
    d, valid = depth_map.depth, depth_map.valid
    codes = np.zeros(d.shape, dtype=np.int64)
    if valid.any():
        dmin = float(d[valid].min())
        dmax = float(d[valid].max())
        scale = (dmax - dmin) / 65534.0 if dmax > dmin else 0.0
        if scale > 0:
            codes[valid] = 1 + np.rint((d[valid] - dmin) / scale).astype(np.int64)
        else:
            codes[valid] = 1
    else:
        dmin, scale = 0.0, 0.0
    write_pgm(path, codes, maxval=65535)
    sidecar = f"offset={_fmt(dmin)}\nscale={_fmt(scale)}\nsentinel=0\n"
    Path(str(path) + ".txt").write_text(sidecar)


def read_depth(path) -> DepthMap:
    """Read a 16-bit depth PGM and its sidecar (values are quantized)."""
    codes = read_pnm(path)
    meta = read_manifest(str(path) + ".txt")
    offset, scale = float(meta["offset"]), float(meta["scale"])
    valid = codes > 0
    depth = np.zeros(codes.shape, dtype=np.float64)
    depth[valid] = offset + scale * (codes[valid] - 1)
    return DepthMap(depth, valid)


def write_bump(path, bump) -> None:
    """8-bit PGM of rounded bump codes plus sidecar with codec parameters."""
    from .bump import BumpMap  # local import avoids a cycle

    assert isinstance(bump, BumpMap)
    codes = np.clip(np.rint(bump.values), 0, bump.codec.levels - 1).astype(np.int64)
    write_pgm(path, codes, maxval=255)
    sidecar = (f"delta_max={_fmt(bump.codec.delta_max)}\n"
               f"levels={bump.codec.levels}\n")
    Path(str(path) + ".txt").write_text(sidecar)
    write_mask(str(path) + ".valid.pgm", bump.valid)


def read_bump(path):
    from .bump import BumpCodec, BumpMap

    codes = read_pnm(path).astype(np.float64)
    meta = read_manifest(str(path) + ".txt")
    codec = BumpCodec(float(meta["delta_max"]), int(meta["levels"]))
    valid_path = Path(str(path) + ".valid.pgm")
    valid = read_mask(valid_path) if valid_path.exists() else np.ones(codes.shape, bool)
    values = np.where(valid, codes, codec.encode_zero())
    return BumpMap(values, codec, valid)


# ---------------------------------------------------------------------------
# landmarks, manifests, meshes


def write_landmarks(path, landmarks: np.ndarray) -> None:
    """68 lines of "x y" at full float precision."""
    pts = np.asarray(landmarks, dtype=np.float64).reshape(-1, 2)
    lines = [f"{_fmt(x)} {_fmt(y)}" for x, y in pts]
    Path(path).write_text("\n".join(lines) + "\n")


def read_landmarks(path) -> np.ndarray:
    rows = []
    for ln in Path(path).read_text().splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        x, y = ln.split()[:2]
        rows.append((float(x), float(y)))
    pts = np.array(rows, dtype=np.float64)
    if pts.shape != (68, 2):
        raise ValueError(f"expected 68 landmark lines, got {pts.shape[0]}")
    return pts


def write_manifest(path, entries: dict) -> None:
    """key=value text; floats at full precision, arrays comma-joined."""
    lines = []
    for key, value in entries.items():
        if isinstance(value, (list, tuple, np.ndarray)):
            txt = ",".join(_fmt(v) for v in np.asarray(value).ravel())
        elif isinstance(value, float):
            txt = _fmt(value)
        else:
            txt = str(value)
        lines.append(f"{key}={txt}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    out = {}
    for ln in Path(path).read_text().splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        key, _, value = ln.partition("=")
        out[key.strip()] = value.strip()
    return out


def manifest_floats(entry: str) -> np.ndarray:
    return np.array([float(v) for v in entry.split(",")], dtype=np.float64)


def write_obj(path, mesh: Mesh) -> None:
    """ASCII OBJ with v/f records, 1-based indices."""
    buf = io.StringIO()
    for x, y, z in mesh.vertices:
        buf.write(f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}\n")
    for a, b, c in mesh.triangles:
        buf.write(f"f {a + 1} {b + 1} {c + 1}\n")
    Path(path).write_text(buf.getvalue())


def read_obj(path) -> Mesh:
    verts, tris = [], []
    for ln in Path(path).read_text().splitlines():
        parts = ln.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(v) for v in parts[1:4]])
        elif parts[0] == "f":
            tris.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return Mesh(np.array(verts), np.array(tris, dtype=np.int64))
