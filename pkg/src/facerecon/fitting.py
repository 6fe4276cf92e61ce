"""Analysis-by-synthesis parameter estimation.

Two stages: a landmark fit (damped Gauss-Newton / Levenberg-Marquardt on
the projected 68 landmarks plus a sigma-normalized coefficient prior) and
an optional photometric refinement that renders the current estimate,
solves the 9 illumination weights in closed form each outer iteration, and
takes damped steps on the geometry parameters against the image luminance.

Parameters are packed as [alpha, beta, r(3), t(3), s]. Under weak
perspective the translation component along the view axis is unobservable
(it cancels out of the projection); it simply stays at its initial value,
which the damped normal equations guarantee exactly.

Jacobians are numeric (central differences): landmark residuals are smooth
in all parameters, and the photometric residuals use the coverage frozen
at the start of each outer iteration, so silhouette discontinuities never
enter a difference quotient.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .camera import CameraPose, project_landmarks
from .illumination import SHCoefficients, sh_basis
from .morphable import (CoefficientVector, Mesh, MorphableModel,
                        evaluate_geometry, landmark_positions)
from .rasterizer import rasterize

log = logging.getLogger("facerecon.fitting")

JACOBIAN_STEP = 1e-5
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass
class FitConfig:
    max_iterations: int = 50
    landmark_weight: float = 1.0
    photo_weight: float = 1.0
    prior_weight: float = 1e-3
    convergence_tol: float = 1e-10
    damping_init: float = 1e-3

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        for name in ("landmark_weight", "photo_weight", "prior_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class ReconstructionState:
    """Fitted coefficients, pose and illumination plus cost bookkeeping."""

    coeffs: CoefficientVector
    pose: CameraPose
    gamma: SHCoefficients
    costs: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)

    def accepted_costs(self) -> np.ndarray:
        return np.array([entry["cost"] for entry in self.trace])


def luminance(image: np.ndarray) -> np.ndarray:
    """Rec.601 luma for RGB images; gray images pass through."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return img
    w = np.array(LUMA_WEIGHTS)
    return img @ w


# ---------------------------------------------------------------------------
# parameter packing


class _Params:
    def __init__(self, model: MorphableModel):
        self.k_id = model.k_id
        self.k_exp = model.k_exp
        self.n = self.k_id + self.k_exp + 7
        self.i_tz = self.k_id + self.k_exp + 5  # view-axis translation slot

    def pack(self, state: ReconstructionState) -> np.ndarray:
        return np.concatenate([state.coeffs.alpha, state.coeffs.beta,
                               state.pose.r, state.pose.t, [state.pose.s]])

    def unpack(self, x: np.ndarray, gamma: SHCoefficients) -> ReconstructionState:
        a = x[: self.k_id]
        b = x[self.k_id : self.k_id + self.k_exp]
        r = x[self.k_id + self.k_exp : self.k_id + self.k_exp + 3]
        t = x[self.k_id + self.k_exp + 3 : self.k_id + self.k_exp + 6]
        s = x[-1]
        return ReconstructionState(CoefficientVector(a.copy(), b.copy()),
                                   CameraPose(r.copy(), t.copy(), float(s)),
                                   SHCoefficients(gamma.gamma.copy()))


def default_init(model: MorphableModel, landmarks_gt: np.ndarray,
                 width: int, height: int) -> ReconstructionState:
    """Similarity initialization: scale from 2-D landmark spans, in-plane
    translation from centroids, zero rotation and coefficients."""
    gt = np.asarray(landmarks_gt, dtype=np.float64).reshape(-1, 2)
    mesh = evaluate_geometry(model, CoefficientVector.zeros(model))
    pts = landmark_positions(mesh, model)
    span_model = np.linalg.norm(pts[:, :2].max(axis=0) - pts[:, :2].min(axis=0))
    span_img = np.linalg.norm(gt.max(axis=0) - gt.min(axis=0))
    s = span_img / span_model if span_model > 0 and span_img > 0 else 1.0
    cu, cv = gt.mean(axis=0)
    cx, cy = pts[:, 0].mean(), pts[:, 1].mean()
    tx = (cu - width / 2.0) / s - cx
    ty = (height / 2.0 - cv) / s - cy
    pose = CameraPose(np.zeros(3), np.array([tx, ty, 0.0]), s)
    return ReconstructionState(CoefficientVector.zeros(model), pose,
                               SHCoefficients.zeros())


# ---------------------------------------------------------------------------
# Levenberg-Marquardt core


def _lm_minimize(residual_fn, cost_fn, x0: np.ndarray, config: FitConfig,
                 trace: list, guard_fn=None) -> np.ndarray:
    """Damped Gauss-Newton with numeric central-difference Jacobian.

    residual_fn(x) -> 1-D residual vector whose sum of squares is the
    least-squares surrogate; cost_fn(x) -> the reported (gated) cost.
    Accepted steps never increase cost_fn. guard_fn rejects invalid
    parameter vectors (e.g. non-positive scale) before evaluation.
    """
    x = x0.copy()
    cost = cost_fn(x)
    if not np.isfinite(cost):
        raise ValueError(f"non-finite cost at initialization: {cost}")
    lam = config.damping_init
    trace.append({"cost": cost, "damping": lam, "accepted": True})

    for it in range(config.max_iterations):
        r0 = residual_fn(x)
        jac = np.empty((r0.size, x.size))
        for j in range(x.size):
            h = JACOBIAN_STEP
            xp = x.copy(); xp[j] += h
            xm = x.copy(); xm[j] -= h
            jac[:, j] = (residual_fn(xp) - residual_fn(xm)) / (2.0 * h)

        jtj = jac.T @ jac
        jtr = jac.T @ r0
        accepted = False
        for _ in range(30):
            try:
                delta = np.linalg.solve(jtj + lam * np.eye(x.size), -jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = x + delta
            if guard_fn is not None and not guard_fn(x_new):
                lam *= 10.0
                continue
            cost_new = cost_fn(x_new)
            if np.isfinite(cost_new) and cost_new < cost:
                x, cost = x_new, cost_new
                lam = max(lam * 0.5, 1e-12)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            log.debug("iteration %d: no acceptable step, stopping", it)
            break
        prev = trace[-1]["cost"]
        trace.append({"cost": cost, "damping": lam, "accepted": True,
                      "step_norm": float(np.linalg.norm(delta))})
        if prev - cost <= config.convergence_tol * max(prev, 1e-300):
            break
    return x


# ---------------------------------------------------------------------------
# landmark fitting


def fit_landmarks(model: MorphableModel, landmarks_gt: np.ndarray,
                  config: FitConfig, width: int, height: int,
                  init: ReconstructionState | None = None) -> ReconstructionState:
    """Minimize weighted landmark loss plus the coefficient prior over
    (alpha, beta, rotation, translation, scale)."""
    gt = np.asarray(landmarks_gt, dtype=np.float64).reshape(-1, 2)
    if not np.all(np.isfinite(gt)):
        raise ValueError("landmarks must be finite")
    state0 = init or default_init(model, gt, width, height)
    packer = _Params(model)
    x0 = packer.pack(state0)
    sw = np.sqrt(config.landmark_weight)
    pw = np.sqrt(config.prior_weight)
    sig = np.concatenate([model.shape_sigma, model.expr_sigma])

    def residuals(x):
        st = packer.unpack(x, state0.gamma)
        pred = project_landmarks(model, st.coeffs, st.pose, width, height)
        lmk = sw * (pred - gt).ravel()
        prior = pw * (x[: packer.k_id + packer.k_exp] / sig)
        return np.concatenate([lmk, prior])

    def cost(x):
        r = residuals(x)
        return float(r @ r)

    def guard(x):
        return x[-1] > 0 and np.all(np.isfinite(x))

    trace: list = []
    x = _lm_minimize(residuals, cost, x0, config, trace, guard)
    state = packer.unpack(x, state0.gamma)
    state.trace = trace
    pred = project_landmarks(model, state.coeffs, state.pose, width, height)
    core = x[: packer.k_id + packer.k_exp]
    state.costs = {
        "total": trace[-1]["cost"],
        "landmark": config.landmark_weight * losses.lmk_loss(pred, gt),
        "prior": config.prior_weight * float(np.sum((core / sig) ** 2)),
        "photometric": 0.0,
    }
    return state


# ---------------------------------------------------------------------------
# photometric fitting


def solve_illumination(mesh: Mesh, pose: CameraPose, image: np.ndarray,
                       width: int, height: int) -> SHCoefficients:
    """Closed-form least-squares illumination given fixed geometry.

    Renders coverage/normals/albedo at the pose and solves the linear
    system basis(normal) * albedo ~ luminance over covered pixels.
    """
    raster = rasterize(mesh, pose, SHCoefficients.zeros(), width, height)
    cov = raster.valid
    if not cov.any():
        raise ValueError("no pixel coverage; cannot estimate illumination")
    lum = luminance(image)
    design = sh_basis(raster.normals[cov]) * raster.albedo[cov][:, None]
    gamma, *_ = np.linalg.lstsq(design, lum[cov], rcond=None)
    return SHCoefficients(gamma)


def fit_photometric(model: MorphableModel, i1: np.ndarray,
                    landmarks_gt: np.ndarray, config: FitConfig,
                    init: ReconstructionState,
                    albedo: np.ndarray | None = None) -> ReconstructionState:
    """Refine a landmark-fit state against image luminance.

    Each outer iteration freezes the current coverage, re-solves gamma in
    closed form (kept only if it lowers the gated cost), then takes one
    accepted Levenberg-Marquardt step on the geometry parameters. The
    gated cost adds photo_weight times the mean absolute luminance
    difference over covered pixels to the landmark and prior terms, so the
    accepted-cost trace is monotone by construction.
    """
    if init is None:
        raise ValueError("photometric fitting needs a landmark-fit init")
    img = np.asarray(i1, dtype=np.float64)
    height, width = img.shape[:2]
    gt = np.asarray(landmarks_gt, dtype=np.float64).reshape(-1, 2)
    if config.photo_weight == 0.0:
        cfg = config
        return fit_landmarks(model, gt, cfg, width, height, init=init)

    lum = luminance(img)
    packer = _Params(model)
    sig = np.concatenate([model.shape_sigma, model.expr_sigma])
    sw = np.sqrt(config.landmark_weight)
    pw = np.sqrt(config.prior_weight)

    def build_mesh(st: ReconstructionState) -> Mesh:
        mesh = evaluate_geometry(model, st.coeffs)
        if albedo is not None:
            mesh.albedo = albedo
        return mesh

    state = ReconstructionState(
        CoefficientVector(init.coeffs.alpha.copy(), init.coeffs.beta.copy()),
        CameraPose(init.pose.r.copy(), init.pose.t.copy(), init.pose.s),
        SHCoefficients(init.gamma.gamma.copy()))

    def full_cost(x, gamma, cov):
        st = packer.unpack(x, gamma)
        pred = project_landmarks(model, st.coeffs, st.pose, width, height)
        lmk = config.landmark_weight * losses.lmk_loss(pred, gt)
        core = x[: packer.k_id + packer.k_exp]
        prior = config.prior_weight * float(np.sum((core / sig) ** 2))
        raster = rasterize(build_mesh(st), st.pose, gamma, width, height)
        inside = raster.valid & cov
        if not inside.any():
            return np.inf, lmk, prior, np.inf
        photo = config.photo_weight * float(
            np.mean(np.abs(raster.intensity[inside] - lum[inside])))
        return lmk + prior + photo, lmk, prior, photo

    trace: list = []
    x = packer.pack(state)
    gamma = state.gamma

    raster0 = rasterize(build_mesh(state), state.pose, gamma, width, height)
    if not raster0.valid.any():
        raise ValueError("no pixel coverage at photometric initialization")
    cov = raster0.valid
    cost, *_ = full_cost(x, gamma, cov)
    if not np.isfinite(cost):
        raise ValueError("non-finite cost at photometric initialization")
    trace.append({"cost": cost, "accepted": True, "gamma_update": False})
    lam = config.damping_init
    converged = False

    for _ in range(config.max_iterations):
        st = packer.unpack(x, gamma)
        base = rasterize(build_mesh(st), st.pose, gamma, width, height)
        if not base.valid.any():
            break
        cov = base.valid

        # closed-form illumination, gated on the full cost
        gamma_new = solve_illumination(build_mesh(st), st.pose, img, width, height)
        cost_new, *_ = full_cost(x, gamma_new, cov)
        if np.isfinite(cost_new) and cost_new < cost:
            gamma, cost = gamma_new, cost_new
            trace.append({"cost": cost, "accepted": True, "gamma_update": True})
            base = rasterize(build_mesh(st), st.pose, gamma, width, height)

        # one damped step on geometry with gamma and coverage frozen
        cov_idx = np.nonzero(cov)
        phw = np.sqrt(config.photo_weight / cov_idx[0].size)

        def residuals(xv, _base=base, _cov=cov_idx, _phw=phw):
            stv = packer.unpack(xv, gamma)
            pred = project_landmarks(model, stv.coeffs, stv.pose, width, height)
            lmk = sw * (pred - gt).ravel()
            prior = pw * (xv[: packer.k_id + packer.k_exp] / sig)
            rv = rasterize(build_mesh(stv), stv.pose, gamma, width, height)
            still = rv.valid[_cov]
            vals = np.where(still, rv.intensity[_cov], _base.intensity[_cov])
            photo = _phw * (vals - lum[_cov])
            return np.concatenate([lmk, photo, prior])

        r0 = residuals(x)
        jac = np.empty((r0.size, x.size))
        for j in range(x.size):
            xp = x.copy(); xp[j] += JACOBIAN_STEP
            xm = x.copy(); xm[j] -= JACOBIAN_STEP
            jac[:, j] = (residuals(xp) - residuals(xm)) / (2.0 * JACOBIAN_STEP)
        jtj = jac.T @ jac
        jtr = jac.T @ r0

        accepted = False
        for _ in range(25):
            try:
                delta = np.linalg.solve(jtj + lam * np.eye(x.size), -jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = x + delta
            if not (x_new[-1] > 0 and np.all(np.isfinite(x_new))):
                lam *= 10.0
                continue
            cost_new, *_ = full_cost(x_new, gamma, cov)
            if np.isfinite(cost_new) and cost_new < cost:
                prev = cost
                x, cost = x_new, cost_new
                lam = max(lam * 0.5, 1e-12)
                accepted = True
                trace.append({"cost": cost, "accepted": True,
                              "gamma_update": False,
                              "step_norm": float(np.linalg.norm(delta))})
                converged = prev - cost <= config.convergence_tol * max(prev, 1e-300)
                break
            lam *= 10.0
        if not accepted or converged:
            break

    final = packer.unpack(x, gamma)
    final.trace = trace
    total, lmk, prior, photo = full_cost(x, gamma, cov)
    final.costs = {"total": total, "landmark": lmk, "prior": prior,
                   "photometric": photo}
    return final
