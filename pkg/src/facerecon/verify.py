"""Self-contained invariant and gradient checks, printed one line each.

Backs the ``verify`` CLI subcommand: every loss gradient is compared
against central finite differences, plus quick structural checks on
rotations, spherical-harmonics constants, the bump codec and the harmonic
fill. Returns True when everything passes.
"""

from __future__ import annotations

import numpy as np

from . import losses
from .bump import BumpCodec
from .camera import rotation_from_euler
from .illumination import sh_basis
from .inpaint import harmonic_fill

FD_STEP = 1e-5
FD_TOL = 1e-4


def _check_loss_gradients(rng: np.random.Generator, reports: list):
    pred = rng.standard_normal((68, 2)) * 10
    gt = rng.standard_normal((68, 2)) * 10
    reports.append(("lmk_loss gradient", losses.finite_difference_check(
        lambda p: losses.lmk_loss(p, gt),
        lambda p: losses.lmk_loss_grad(p, gt),
        pred, FD_STEP, FD_TOL).passed))

    h, w = 10, 12
    i0 = rng.uniform(0.1, 0.9, (h, w))
    i1 = rng.uniform(0.1, 0.9, (h, w))
    mask = np.zeros((h, w), dtype=bool)
    mask[3:7, 4:9] = True
    reports.append(("pixel_loss gradient", losses.finite_difference_check(
        lambda p: losses.pixel_loss(p, i0, mask),
        lambda p: losses.pixel_loss_grad(p, i0, mask),
        i1, FD_STEP, FD_TOL, kink_fn=lambda p: (p - i0).ravel(),
        rng=np.random.default_rng(1)).passed))

    reports.append(("style_loss gradient", losses.finite_difference_check(
        lambda p: losses.style_loss(p, i0, mask),
        lambda p: losses.style_loss_grad(p, i0, mask),
        i1, FD_STEP, FD_TOL,
        kink_fn=lambda p: losses.style_kink_values(p, i0, mask),
        rng=np.random.default_rng(2)).passed))

    def synth_kinks(p):
        return np.concatenate([(p - i0).ravel(),
                               losses.style_kink_values(p, i0, mask)])

    reports.append(("synthesis_loss gradient", losses.finite_difference_check(
        lambda p: losses.synthesis_loss(p, i0, mask),
        lambda p: losses.synthesis_loss_grad(p, i0, mask),
        i1, FD_STEP, FD_TOL, kink_fn=synth_kinks,
        rng=np.random.default_rng(3)).passed))

    bump_gt = rng.uniform(100, 150, (h, w))
    bump = bump_gt + rng.standard_normal((h, w))

    def geo_kinks(p):
        d = p - bump_gt
        return np.concatenate([d.ravel(),
                               (d[:, 1:] - d[:, :-1]).ravel(),
                               (d[1:, :] - d[:-1, :]).ravel()])

    reports.append(("geo_loss gradient", losses.finite_difference_check(
        lambda p: losses.geo_loss(p, bump_gt),
        lambda p: losses.geo_loss_grad(p, bump_gt),
        bump, FD_STEP, FD_TOL, kink_fn=geo_kinks,
        rng=np.random.default_rng(4)).passed))


def run_verification(verbose: bool = False) -> bool:
    rng = np.random.default_rng(2024)
    reports: list[tuple[str, bool]] = []

    worst = 0.0
    for _ in range(100):
        rm = rotation_from_euler(rng.uniform(-np.pi, np.pi, 3))
        worst = max(worst, float(np.abs(rm.T @ rm - np.eye(3)).max()),
                    abs(float(np.linalg.det(rm)) - 1.0))
    reports.append(("rotation orthonormality", worst < 1e-12))

    n = rng.standard_normal((200, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    basis = sh_basis(n)
    reports.append(("sh constant band",
                    float(np.abs(basis[:, 0] - 0.28209479177387814).max()) < 1e-12))

    codec = BumpCodec(2.5)
    d = rng.uniform(-2.5, 2.5, 1000)
    reports.append(("bump codec roundtrip",
                    float(np.abs(codec.decode(codec.encode(d)) - d).max()) < 1e-12))

    img = np.outer(np.ones(16), np.linspace(0, 1, 16))
    hole = np.zeros((16, 16), dtype=bool)
    hole[:, 6:10] = True
    filled = harmonic_fill(img, hole)
    reports.append(("harmonic linear recovery",
                    float(np.abs(filled - img).max()) < 1e-6))

    _check_loss_gradients(rng, reports)

    ok = all(passed for _, passed in reports)
    if verbose:
        for name, passed in reports:
            print(f"[{'PASS' if passed else 'FAIL'}] {name}")
        print(f"verify: {'all checks passed' if ok else 'FAILURES present'}")
    return ok
