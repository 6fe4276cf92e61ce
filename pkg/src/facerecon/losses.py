"""Scalar loss functions with analytic gradients and a finite-difference
verification utility.

Five losses: squared-L2 landmark distance, mask-normalized L1 pixel
difference, Gram-matrix style distance on masked images, their weighted
synthesis combination (defaults 1 and 250), and the bump-map geometric
loss (L1 on values and forward-difference gradients).

Style features come from a fixed, dependency-free extractor: three layers
of seeded random 3x3 convolutions (widths 8, 16, 32, seed 42) with
half-wave rectification, 2x average downsampling between layers. The
extractor is deterministic and shared read-only, which keeps every loss a
pure function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_LAMBDA_PIXE = 1.0
DEFAULT_LAMBDA_STYLE = 250.0


@dataclass
class LossWeights:
    lambda_pixe: float = DEFAULT_LAMBDA_PIXE
    lambda_style: float = DEFAULT_LAMBDA_STYLE

    def __post_init__(self):
        if self.lambda_pixe < 0 or self.lambda_style < 0:
            raise ValueError("loss weights must be non-negative")


# ---------------------------------------------------------------------------
# landmark loss


def lmk_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    """Squared L2 norm of the stacked landmark differences."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"landmark shapes differ: {pred.shape} vs {gt.shape}")
    d = pred - gt
    return float(np.sum(d * d))


def lmk_loss_grad(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    return 2.0 * (np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64))


# ---------------------------------------------------------------------------
# pixel loss


def _mask_size(mask: np.ndarray, channels: int) -> int:
    return int(np.count_nonzero(mask)) * channels


def pixel_loss(i1: np.ndarray, i0: np.ndarray, mask: np.ndarray) -> float:
    """L1 difference over all pixels and channels, divided by the mask size
    (masked pixel count times channels). Empty masks are an error: the
    normalization would divide by zero."""
    i1 = np.asarray(i1, dtype=np.float64)
    i0 = np.asarray(i0, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if i1.shape != i0.shape:
        raise ValueError(f"image shapes differ: {i1.shape} vs {i0.shape}")
    if mask.shape != i1.shape[:2]:
        raise ValueError("mask does not match image dimensions")
    channels = 1 if i1.ndim == 2 else i1.shape[2]
    ms = _mask_size(mask, channels)
    if ms == 0:
        raise ValueError("empty mask: pixel loss normalization undefined")
    return float(np.sum(np.abs(i1 - i0)) / ms)


def pixel_loss_grad(i1: np.ndarray, i0: np.ndarray, mask: np.ndarray) -> np.ndarray:
    i1 = np.asarray(i1, dtype=np.float64)
    i0 = np.asarray(i0, dtype=np.float64)
    channels = 1 if i1.ndim == 2 else i1.shape[2]
    ms = _mask_size(np.asarray(mask, dtype=bool), channels)
    if ms == 0:
        raise ValueError("empty mask: pixel loss normalization undefined")
    return np.sign(i1 - i0) / ms


# ---------------------------------------------------------------------------
# style loss


class FeatureExtractor:
    """Three-layer random-convolution feature stack (deterministic per seed).

    Kernel tensors are generated once per input channel count and shared
    read-only afterwards.
    """

    def __init__(self, widths=(8, 16, 32), seed: int = 42):
        if len(widths) < 1 or any(w < 1 for w in widths):
            raise ValueError("need at least one positive layer width")
        self.widths = tuple(int(w) for w in widths)
        self.seed = int(seed)
        self._kernels: dict[int, list[np.ndarray]] = {}

    def kernels(self, in_channels: int) -> list[np.ndarray]:
        if in_channels not in self._kernels:
            rng = np.random.default_rng(self.seed)
            stack = []
            c_in = in_channels
            for c_out in self.widths:
                w = rng.standard_normal((c_out, c_in, 3, 3)) / np.sqrt(9.0 * c_in)
                stack.append(w)
                c_in = c_out
            self._kernels[in_channels] = stack
        return self._kernels[in_channels]

    @staticmethod
    def _conv_same(x: np.ndarray, w: np.ndarray) -> np.ndarray:
        # x: (H, W, C_in), w: (C_out, C_in, 3, 3) -> (H, W, C_out)
        padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
        windows = sliding_window_view(padded, (3, 3), axis=(0, 1))
        return np.einsum("hwcij,ocij->hwo", windows, w, optimize=True)

    @staticmethod
    def _pool2(x: np.ndarray) -> np.ndarray:
        h, w = x.shape[:2]
        h2, w2 = h // 2, w // 2
        if h2 < 1 or w2 < 1:
            raise ValueError("feature map too small to downsample")
        v = x[: 2 * h2, : 2 * w2]
        return 0.25 * (v[0::2, 0::2] + v[1::2, 0::2] + v[0::2, 1::2] + v[1::2, 1::2])

    def forward(self, image: np.ndarray) -> list[dict]:
        """Per-layer cache: input, pre-activation, rectified feature map."""
        x = np.asarray(image, dtype=np.float64)
        if x.ndim == 2:
            x = x[:, :, None]
        stack = self.kernels(x.shape[2])
        cache = []
        for li, w in enumerate(stack):
            pre = self._conv_same(x, w)
            phi = np.maximum(pre, 0.0)
            cache.append({"x": x, "pre": pre, "phi": phi})
            if li + 1 < len(stack):
                x = self._pool2(phi)
        return cache

    def features(self, image: np.ndarray) -> list[np.ndarray]:
        """Rectified feature maps phi_n, one (H_n, W_n, R_n) array per layer."""
        return [c["phi"] for c in self.forward(image)]

    def backward(self, cache: list[dict], phi_grads: list[np.ndarray],
                 in_channels: int) -> np.ndarray:
        """Backpropagate per-layer gradients on phi_n down to the input image."""
        stack = self.kernels(in_channels)
        g_x = None
        for li in range(len(stack) - 1, -1, -1):
            g_phi = phi_grads[li].copy()
            if g_x is not None:
                g_phi += self._unpool2(g_x, cache[li]["phi"].shape)
            g_pre = g_phi * (cache[li]["pre"] > 0)
            w = stack[li]
            # transpose conv: flip spatially, swap in/out channels
            w_t = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            g_x = self._conv_same(g_pre, w_t)
        return g_x[:, :, 0] if in_channels == 1 else g_x

    @staticmethod
    def _unpool2(g: np.ndarray, target_shape) -> np.ndarray:
        out = np.zeros(target_shape)
        h2, w2 = g.shape[:2]
        for dy in (0, 1):
            for dx in (0, 1):
                out[dy : 2 * h2 : 2, dx : 2 * w2 : 2] += 0.25 * g
        return out


_default_extractor = FeatureExtractor()


def gram(features: np.ndarray) -> np.ndarray:
    """Channel inner-product matrix of an (H, W, R) feature layer."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 3 or f.size == 0:
        raise ValueError("gram wants a nonempty (H, W, R) feature layer")
    flat = f.reshape(-1, f.shape[2])
    return flat.T @ flat


def _masked(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    m = np.asarray(mask, dtype=bool).astype(np.float64)
    return img * m if img.ndim == 2 else img * m[:, :, None]


def style_loss(i1: np.ndarray, i0: np.ndarray, mask: np.ndarray,
               extractor: FeatureExtractor | None = None) -> float:
    """Sum over layers of the entrywise-L1 Gram difference of the masked
    images, scaled by 1/(R_n * H_n * W_n) inside the norm and 1/R_n^2
    outside."""
    ex = extractor or _default_extractor
    i1 = np.asarray(i1, dtype=np.float64)
    i0 = np.asarray(i0, dtype=np.float64)
    if i1.shape != i0.shape:
        raise ValueError(f"image shapes differ: {i1.shape} vs {i0.shape}")
    fa = ex.features(_masked(i1, mask))
    fb = ex.features(_masked(i0, mask))
    total = 0.0
    for pa, pb in zip(fa, fb):
        hn, wn, rn = pa.shape
        delta = (gram(pa) - gram(pb)) / (rn * hn * wn)
        total += float(np.sum(np.abs(delta))) / (rn * rn)
    return total


def style_loss_grad(i1: np.ndarray, i0: np.ndarray, mask: np.ndarray,
                    extractor: FeatureExtractor | None = None) -> np.ndarray:
    """Analytic gradient of style_loss with respect to i1."""
    ex = extractor or _default_extractor
    i1 = np.asarray(i1, dtype=np.float64)
    i0 = np.asarray(i0, dtype=np.float64)
    m = np.asarray(mask, dtype=bool).astype(np.float64)
    in_channels = 1 if i1.ndim == 2 else i1.shape[2]
    cache_a = ex.forward(_masked(i1, mask))
    cache_b = ex.forward(_masked(i0, mask))
    phi_grads = []
    for ca, cb in zip(cache_a, cache_b):
        pa, pb = ca["phi"], cb["phi"]
        hn, wn, rn = pa.shape
        denom = rn * hn * wn
        s = np.sign(gram(pa) - gram(pb)) / (denom * rn * rn)
        flat = pa.reshape(-1, rn)
        phi_grads.append((flat @ (s + s.T)).reshape(pa.shape))
    g = ex.backward(cache_a, phi_grads, in_channels)
    return g * m if i1.ndim == 2 else g * m[:, :, None]


def synthesis_loss(i1: np.ndarray, i0: np.ndarray, mask: np.ndarray,
                   weights: LossWeights | None = None,
                   extractor: FeatureExtractor | None = None) -> float:
    """Weighted pixel + style combination; defaults 1*pixel + 250*style."""
    w = weights or LossWeights()
    return (w.lambda_pixe * pixel_loss(i1, i0, mask)
            + w.lambda_style * style_loss(i1, i0, mask, extractor))


def synthesis_loss_grad(i1: np.ndarray, i0: np.ndarray, mask: np.ndarray,
                        weights: LossWeights | None = None,
                        extractor: FeatureExtractor | None = None) -> np.ndarray:
    w = weights or LossWeights()
    return (w.lambda_pixe * pixel_loss_grad(i1, i0, mask)
            + w.lambda_style * style_loss_grad(i1, i0, mask, extractor))


# ---------------------------------------------------------------------------
# bump-map geometric loss


def _forward_dx(a: np.ndarray) -> np.ndarray:
    g = np.zeros_like(a)
    g[:, :-1] = a[:, 1:] - a[:, :-1]
    return g


def _forward_dy(a: np.ndarray) -> np.ndarray:
    g = np.zeros_like(a)
    g[:-1, :] = a[1:, :] - a[:-1, :]
    return g


def geo_loss(bump: np.ndarray, bump_gt: np.ndarray) -> float:
    """L1 on bump values plus L1 on their forward-difference x/y gradients
    (replicate boundary: last column/row gradient is zero)."""
    b = np.asarray(bump, dtype=np.float64)
    g = np.asarray(bump_gt, dtype=np.float64)
    if b.shape != g.shape or b.ndim != 2:
        raise ValueError(f"bump shapes differ: {b.shape} vs {g.shape}")
    d = b - g
    return float(np.sum(np.abs(d)) + np.sum(np.abs(_forward_dx(d)))
                 + np.sum(np.abs(_forward_dy(d))))


def geo_loss_grad(bump: np.ndarray, bump_gt: np.ndarray) -> np.ndarray:
    """Subgradient of geo_loss with respect to the first argument."""
    b = np.asarray(bump, dtype=np.float64)
    g = np.asarray(bump_gt, dtype=np.float64)
    d = b - g
    grad = np.sign(d)
    sx = np.sign(d[:, 1:] - d[:, :-1])  # (H, W-1)
    grad[:, 1:] += sx
    grad[:, :-1] -= sx
    sy = np.sign(d[1:, :] - d[:-1, :])  # (H-1, W)
    grad[1:, :] += sy
    grad[:-1, :] -= sy
    return grad


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckReport:
    """Outcome of one central-difference gradient comparison."""

    max_rel_error: float
    tolerance: float
    passed: bool
    n_params: int
    step: float
    nudges: int = 0
    note: str = ""


def finite_difference_check(loss_fn, grad_fn, point: np.ndarray,
                            step: float = 1e-5, tolerance: float = 1e-4,
                            kink_fn=None, rng=None,
                            max_nudges: int = 200) -> GradCheckReport:
    """Compare grad_fn against central differences of loss_fn at ``point``.

    For losses with L1 terms, ``kink_fn(point)`` exposes the internal
    residual values; the checkpoint is nudged with small seeded offsets
    until every |residual| > 10*step, so the comparison never straddles a
    kink. The reported relative error is the max absolute component
    deviation normalized by the larger gradient magnitude.
    """
    p = np.array(point, dtype=np.float64)
    rng = rng or np.random.default_rng(0)
    nudges = 0
    if kink_fn is not None:
        while nudges < max_nudges:
            res = np.asarray(kink_fn(p), dtype=np.float64)
            if res.size == 0 or np.min(np.abs(res)) > 10.0 * step:
                break
            p = p + rng.standard_normal(p.shape) * 20.0 * step
            nudges += 1
        else:
            raise RuntimeError("could not move checkpoint away from kinks")

    analytic = np.asarray(grad_fn(p), dtype=np.float64)
    if analytic.shape != p.shape:
        raise ValueError("gradient shape does not match parameter shape")
    fd = np.zeros_like(p)
    flat_p = p.ravel()
    flat_fd = fd.ravel()
    for i in range(flat_p.size):
        orig = flat_p[i]
        flat_p[i] = orig + step
        hi = loss_fn(p)
        flat_p[i] = orig - step
        lo = loss_fn(p)
        flat_p[i] = orig
        flat_fd[i] = (hi - lo) / (2.0 * step)

    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(fd))), 1e-300)
    max_rel = float(np.max(np.abs(analytic - fd))) / scale
    return GradCheckReport(max_rel_error=max_rel, tolerance=tolerance,
                           passed=max_rel < tolerance, n_params=p.size,
                           step=step, nudges=nudges)


def style_kink_values(i1: np.ndarray, i0: np.ndarray, mask: np.ndarray,
                      extractor: FeatureExtractor | None = None) -> np.ndarray:
    """Internal nonsmooth quantities of style_loss that move with i1: the
    ReLU pre-activations of the masked i1 and the Gram-difference entries.
    Pre-activations at pixels zeroed by the mask are excluded only via the
    masked image itself, so fully-masked inputs yield structural zeros;
    those never flip under an i1 perturbation and are dropped."""
    ex = extractor or _default_extractor
    ca = ex.forward(_masked(i1, mask))
    cb = ex.forward(_masked(i0, mask))
    vals = []
    for la, lb in zip(ca, cb):
        pre = la["pre"].ravel()
        vals.append(pre[pre != 0.0])
        vals.append((gram(la["phi"]) - gram(lb["phi"])).ravel())
    return np.concatenate(vals)
