"""Fitting lanes to labeled points: least squares plus gradient refinement.

Direct fits handle the supervised pieces (polynomial BEV curve, height
keypoints, a perspective-space polynomial baseline). Projective fitting
descends the image-plane losses with momentum gradient descent so lanes
can be recovered from 2D-only labels, or polished against full 3D
labels. The descent runs in a diagonally rescaled parameter space: curve
coefficients act on different powers of z, so their raw gradient
magnitudes differ by orders of magnitude and unscaled steps either crawl
or blow up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .assignment import ResampledLane2D
from .camera import CameraIntrinsics, Lane2D, invert_to_ground, project_points
from .errors import (
    DegenerateInputError,
    NonFiniteError,
    RankDeficientError,
    ValidationError,
)
from .geometry import BevCurve, HeightProfile, Lane3D, lane_to_vector
from .losses import (
    DEFAULT_BEV_IOU,
    DEFAULT_PERSPECTIVE_IOU,
    IoUConfig,
    LossWeights,
    bernstein_basis,
    bev_iou_loss,
    endpoint_z_loss,
    height_loss,
    height_variance_reg,
    perspective_losses,
)

MOMENTUM = 0.9
# Hard floor on z_min and on the span so samples stay in front of the camera.
Z_FLOOR = 0.1
MIN_SPAN = 0.5
# Heights and span endpoints feel the raw-pixel endpoint loss, whose slope
# per unit parameter is fy/z-ish (hundreds), versus the row-averaged IoU
# slopes of order 1/(e * rows). Equal steps overshoot those creases by
# meters, so these parameters take steps damped by this factor squared.
ROW_TERM_DAMP = 1e-2

_ORDERS = (2, 3, 4, "bezier")

# Row j holds the s^j coefficients of the four cubic Bernstein polynomials.
_BERNSTEIN_TO_S = np.array(
    [
        [1.0, 0.0, 0.0, 0.0],
        [-3.0, 3.0, 0.0, 0.0],
        [3.0, -6.0, 3.0, 0.0],
        [-1.0, 3.0, -3.0, 1.0],
    ]
)


@dataclass(frozen=True)
class FitConfig:
    """Knobs for gradient refinement and model selection.

    order picks the BEV curve model: polynomial degree 2, 3 or 4, or
    "bezier" for a cubic on the Bernstein basis. Degree 4 is available
    for the least-squares comparison only; the lane representation (and
    gradient refinement) is cubic.
    """

    max_iters: int = 400
    step_size: float = 1e-2
    convergence_tol: float = 1e-9
    plateau_patience: int = 30
    seed: int = 0
    order: int | str = 3
    keypoints: int = 72
    ipm_camera_height: float = 1.5

    def __post_init__(self):
        if self.order not in _ORDERS:
            raise ValidationError(f"order must be one of {_ORDERS}, got {self.order!r}")
        if self.max_iters < 0 or self.step_size <= 0.0 or self.keypoints < 2:
            raise ValidationError("bad fit configuration")


@dataclass(frozen=True)
class PolyFit:
    """A least-squares BEV curve fit.

    coefficients are ascending powers of z. For the Bernstein basis the
    four control values and the span they ride on are kept alongside the
    equivalent power coefficients.
    """

    coefficients: np.ndarray
    basis: str
    rms_residual: float
    max_residual: float
    control_values: np.ndarray | None = None
    z_span: tuple[float, float] | None = None

    def x_at(self, z):
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        for coef in self.coefficients[::-1]:
            out = out * z + coef
        return float(out) if out.ndim == 0 else out

    def to_curve(self) -> BevCurve:
        """Collapse to the cubic lane curve; degree-4 fits do not fit."""
        c = np.zeros(4)
        if self.coefficients.size > 4 and np.any(self.coefficients[4:] != 0.0):
            raise ValidationError("degree-4 fit cannot be expressed as a cubic curve")
        c[: min(4, self.coefficients.size)] = self.coefficients[:4]
        return BevCurve(a=c[3], b=c[2], c=c[1], d=c[0])


def bernstein_to_power(control: np.ndarray, z_min: float, z_max: float) -> np.ndarray:
    """Ascending-z cubic coefficients of a Bernstein curve over [z_min, z_max]."""
    span = z_max - z_min
    if span <= 0.0:
        raise ValidationError("z span must be positive")
    coeffs_s = _BERNSTEIN_TO_S @ np.asarray(control, dtype=float)
    poly_s = np.polynomial.Polynomial(coeffs_s)
    poly_z = poly_s(np.polynomial.Polynomial([-z_min / span, 1.0 / span]))
    out = np.zeros(4)
    out[: poly_z.coef.size] = poly_z.coef
    return out


def power_to_bernstein(coefficients: np.ndarray, z_min: float, z_max: float) -> np.ndarray:
    """Control values of the cubic over [z_min, z_max], inverse of the above."""
    span = z_max - z_min
    if span <= 0.0:
        raise ValidationError("z span must be positive")
    poly_z = np.polynomial.Polynomial(np.asarray(coefficients, dtype=float))
    poly_s = poly_z(np.polynomial.Polynomial([z_min, span]))
    coeffs_s = np.zeros(4)
    coeffs_s[: poly_s.coef.size] = poly_s.coef
    return np.linalg.solve(_BERNSTEIN_TO_S, coeffs_s)


def fit_bev_polynomial(points: np.ndarray, order: int | str = 3) -> PolyFit:
    """Least-squares x(z) over 3D lane points, shape (m, 3) of [x, y, z].

    order 2, 3 or 4 fits that polynomial degree; "bezier" fits a cubic on
    the Bernstein basis over the points' z span. Raises
    RankDeficientError when there are fewer distinct z values than
    unknowns.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValidationError(f"expected (m, 3) points, got {points.shape}")
    if order not in _ORDERS:
        raise ValidationError(f"order must be one of {_ORDERS}, got {order!r}")
    z, x = points[:, 2], points[:, 0]
    n_unknowns = 4 if order == "bezier" else order + 1
    if np.unique(z).size < n_unknowns:
        raise RankDeficientError(
            f"{np.unique(z).size} distinct z values cannot determine {n_unknowns} coefficients"
        )

    if order == "bezier":
        z0, z1 = float(z.min()), float(z.max())
        s = (z - z0) / (z1 - z0)
        design = bernstein_basis(s)
        control, *_ = np.linalg.lstsq(design, x, rcond=None)
        residual = design @ control - x
        return PolyFit(
            coefficients=bernstein_to_power(control, z0, z1),
            basis="bernstein",
            rms_residual=float(np.sqrt(np.mean(residual**2))),
            max_residual=float(np.max(np.abs(residual))),
            control_values=control,
            z_span=(z0, z1),
        )

    design = np.vander(z, order + 1, increasing=True)
    coeffs, *_ = np.linalg.lstsq(design, x, rcond=None)
    residual = design @ coeffs - x
    return PolyFit(
        coefficients=coeffs,
        basis="power",
        rms_residual=float(np.sqrt(np.mean(residual**2))),
        max_residual=float(np.max(np.abs(residual))),
    )


def fit_heights_direct(
    points: np.ndarray, keypoints: int, z_min: float | None = None, z_max: float | None = None
) -> HeightProfile:
    """Height keypoints read straight off labeled points by interpolation.

    The span defaults to the points' z range. Needs at least two points
    with distinct z.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] < 2:
        raise DegenerateInputError("need at least two [x, y, z] points")
    order = np.argsort(points[:, 2], kind="stable")
    z, y = points[order, 2], points[order, 1]
    if z[0] == z[-1]:
        raise DegenerateInputError("points span no z range")
    lo = float(z[0]) if z_min is None else float(z_min)
    hi = float(z[-1]) if z_max is None else float(z_max)
    grid = np.linspace(lo, hi, keypoints)
    heights = np.interp(grid, z, y)
    return HeightProfile(heights=tuple(heights), z_min=lo, z_max=hi)


@dataclass(frozen=True)
class PerspectiveFit:
    """A least-squares u(v) polynomial, the coupled-image-space baseline."""

    coefficients: np.ndarray
    rms_residual: float
    max_residual: float

    def u_at(self, v):
        v = np.asarray(v, dtype=float)
        out = np.zeros_like(v)
        for coef in self.coefficients[::-1]:
            out = out * v + coef
        return float(out) if out.ndim == 0 else out


def fit_perspective_baseline(lane: Lane2D, order: int = 3) -> PerspectiveFit:
    """Fit u as a polynomial of v directly in the image plane.

    On uneven ground the projected lane can fold back in v, which no
    function u(v) can follow; the residuals record how badly.
    """
    if order < 1:
        raise ValidationError(f"order must be >= 1, got {order}")
    u, v = lane.u, lane.v
    if np.unique(v).size < order + 1:
        raise RankDeficientError(
            f"{np.unique(v).size} distinct rows cannot determine {order + 1} coefficients"
        )
    design = np.vander(v, order + 1, increasing=True)
    coeffs, *_ = np.linalg.lstsq(design, u, rcond=None)
    residual = design @ coeffs - u
    return PerspectiveFit(
        coefficients=coeffs,
        rms_residual=float(np.sqrt(np.mean(residual**2))),
        max_residual=float(np.max(np.abs(residual))),
    )


@dataclass(frozen=True)
class FitReport:
    """Outcome of a gradient refinement run.

    terms holds the loss pieces at the returned iterate, which is the
    best one seen, never worse than the initialization.
    """

    lane: Lane3D
    iterations: int
    converged: bool
    terms: dict[str, float]


def _scales(theta: np.ndarray, basis: str) -> np.ndarray:
    """Per-parameter step scales; curve coefficients scale by z powers,
    heights and span endpoints are damped against the endpoint-row creases."""
    scales = np.ones(theta.size)
    if basis == "power":
        zc = max(abs(float(theta[-1])), 1.0)
        scales[0] = zc**-3
        scales[1] = zc**-2
        scales[2] = zc**-1
    scales[4:] = ROW_TERM_DAMP
    return scales


def _clamp_span(theta: np.ndarray) -> None:
    theta[-2] = max(theta[-2], Z_FLOOR)
    theta[-1] = max(theta[-1], theta[-2] + MIN_SPAN)


def _descend(theta: np.ndarray, objective, cfg: FitConfig, basis: str, freeze=()):
    """Momentum descent with per-parameter scaling and best-iterate return."""
    theta = theta.astype(float).copy()
    _clamp_span(theta)
    scales = _scales(theta, basis)
    step = cfg.step_size * scales**2
    mask = np.ones(theta.size)
    for idx in freeze:
        mask[idx] = 0.0

    velocity = np.zeros_like(theta)
    loss, grad, terms = objective(theta)
    best_loss, best_theta, best_terms, best_iter = loss, theta.copy(), terms, 0
    converged = False
    iterations = 0
    for it in range(1, cfg.max_iters + 1):
        if math.isnan(loss) or (np.isfinite(loss) and not np.isfinite(grad).all()):
            raise NonFiniteError(f"objective became non-finite at iteration {it - 1}")
        if np.isfinite(loss):
            scaled_norm = float(np.linalg.norm(grad * mask * scales))
            if scaled_norm <= cfg.convergence_tol:
                converged = True
                break
        velocity = MOMENTUM * velocity - step * (grad * mask)
        theta = theta + velocity
        _clamp_span(theta)
        iterations = it
        loss, grad, terms = objective(theta)
        if loss < best_loss:
            best_loss, best_theta, best_terms, best_iter = loss, theta.copy(), terms, it
        if it - best_iter >= cfg.plateau_patience:
            break
    return best_theta, best_terms, iterations, converged


def _theta_to_lane(theta: np.ndarray, basis: str) -> Lane3D:
    z_min, z_max = float(theta[-2]), float(theta[-1])
    if basis == "bernstein":
        coeffs = bernstein_to_power(theta[:4], z_min, z_max)
    else:
        coeffs = theta[:4][::-1].copy()  # stored high-to-low in theta
    curve = BevCurve(a=float(coeffs[3]), b=float(coeffs[2]), c=float(coeffs[1]), d=float(coeffs[0]))
    profile = HeightProfile(heights=tuple(theta[4:-2]), z_min=z_min, z_max=z_max)
    return Lane3D(curve=curve, profile=profile, score=1.0)


def _lane_to_theta(lane: Lane3D, basis: str) -> np.ndarray:
    geo = lane_to_vector(lane)[:-1]
    if basis == "bernstein":
        coeffs = np.array([lane.curve.d, lane.curve.c, lane.curve.b, lane.curve.a])
        geo = geo.copy()
        geo[:4] = power_to_bernstein(coeffs, lane.z_min, lane.z_max)
    return geo


def fit_lane_2d(
    gt: ResampledLane2D,
    k: CameraIntrinsics,
    init: Lane3D,
    cfg: FitConfig = FitConfig(),
    per_iou: IoUConfig = DEFAULT_PERSPECTIVE_IOU,
    weights: LossWeights = LossWeights(),
) -> FitReport:
    """Refine a lane against 2D labels only.

    Descends beta * (image IoU loss + endpoint loss) plus the height
    spread regularizer. The 3D scale stays whatever the initialization
    pinned it to; 2D labels cannot determine it.
    """
    basis = "bernstein" if cfg.order == "bezier" else "power"
    if cfg.order == 4:
        raise ValidationError("gradient refinement is cubic; degree 4 is least-squares only")
    freeze = (0,) if cfg.order == 2 else ()
    theta0 = _lane_to_theta(init, basis)
    if cfg.order == 2:
        theta0[0] = 0.0

    inf_terms = {"l_per": float("inf"), "l_v": float("inf"), "l_reg": 0.0, "total": float("inf")}

    def objective(theta):
        per = perspective_losses(None, k, gt, per_iou, basis=basis, geo_params=theta)
        if not per.overlap:
            return float("inf"), np.zeros(theta.size), dict(inf_terms)
        heights = theta[4:-2]
        centered = heights - heights.mean()
        sigma = float(np.sqrt(np.mean(centered**2)))
        grad = weights.beta * (per.grad_per + per.grad_v)
        if sigma > 0.0:
            grad[4:-2] += centered / (heights.size * sigma)
        loss = weights.beta * (per.l_per + per.l_v) + sigma
        terms = {"l_per": per.l_per, "l_v": per.l_v, "l_reg": sigma, "total": loss}
        return loss, grad, terms

    theta, terms, iterations, converged = _descend(theta0, objective, cfg, basis, freeze)
    return FitReport(_theta_to_lane(theta, basis), iterations, converged, terms)


def fit_lane_3d(
    gt3: np.ndarray,
    gt2d: ResampledLane2D,
    k: CameraIntrinsics,
    cfg: FitConfig = FitConfig(),
    bev_iou: IoUConfig = DEFAULT_BEV_IOU,
    per_iou: IoUConfig = DEFAULT_PERSPECTIVE_IOU,
    weights: LossWeights = LossWeights(),
    init: Lane3D | None = None,
) -> FitReport:
    """Fit a lane to 3D labeled points plus their 2D projection.

    Initializes from least squares (curve and heights read off the
    points, span from their z range) and descends alpha * (BEV + height
    + span losses) + beta * (projected losses).
    """
    if cfg.order == 4 or cfg.order == "bezier":
        raise ValidationError("3D refinement uses the cubic representation")
    gt3 = np.asarray(gt3, dtype=float)
    order = np.argsort(gt3[:, 2], kind="stable")
    gt3 = gt3[order]
    gt_z_min, gt_z_max = float(gt3[0, 2]), float(gt3[-1, 2])

    if init is None:
        poly = fit_bev_polynomial(gt3, order=cfg.order)
        profile = fit_heights_direct(gt3, cfg.keypoints, max(gt_z_min, Z_FLOOR), gt_z_max)
        init = Lane3D(curve=poly.to_curve(), profile=profile, score=1.0)
    freeze = (0,) if cfg.order == 2 else ()
    theta0 = _lane_to_theta(init, "power")

    def objective(theta):
        lane = _theta_to_lane(theta, "power")
        z = np.linspace(lane.z_min, lane.z_max, bev_iou.sample_count)
        l_bev, g_bev = bev_iou_loss(lane, np.interp(z, gt3[:, 2], gt3[:, 0]), bev_iou)
        gt_h = np.interp(lane.profile.keypoint_z(), gt3[:, 2], gt3[:, 1])
        l_h, g_h = height_loss(lane, gt_h)
        l_z, (g_zmin, g_zmax) = endpoint_z_loss(lane, gt_z_min, gt_z_max)
        per = perspective_losses(lane, k, gt2d, per_iou)
        if not per.overlap:
            bad = {key: float("inf") for key in ("l_bev", "l_h", "l_z", "l_per", "l_v", "total")}
            return float("inf"), np.zeros(theta.size), bad
        grad = np.zeros(theta.size)
        grad[0:4] = weights.alpha * g_bev
        grad[4:-2] = weights.alpha * g_h
        grad[-2] = weights.alpha * g_zmin
        grad[-1] = weights.alpha * g_zmax
        grad += weights.beta * (per.grad_per + per.grad_v)
        loss = weights.alpha * (l_bev + l_h + l_z) + weights.beta * (per.l_per + per.l_v)
        terms = {
            "l_bev": l_bev,
            "l_h": l_h,
            "l_z": l_z,
            "l_per": per.l_per,
            "l_v": per.l_v,
            "total": loss,
        }
        return loss, grad, terms

    theta, terms, iterations, converged = _descend(theta0, objective, cfg, "power", freeze)
    return FitReport(_theta_to_lane(theta, "power"), iterations, converged, terms)


def ipm_init(gt: Lane2D, k: CameraIntrinsics, cfg: FitConfig = FitConfig()) -> Lane3D:
    """Initialize a 3D lane from 2D points via a flat-ground assumption.

    Back-projects every point below the horizon onto the plane
    y = cfg.ipm_camera_height and fits curve and heights to the result.
    The assumed height also pins the overall scale, which 2D data leaves
    free. Raises DegenerateInputError when too few points back-project.
    """
    rows = []
    for u, v in gt.points:
        if v > k.oy + 1e-9:
            rows.append(invert_to_ground(k, u, v, cfg.ipm_camera_height))
    if len(rows) < 2:
        raise DegenerateInputError("too few points below the horizon to back-project")
    pts = np.array(rows)
    fit_order = 3 if cfg.order in (4, "bezier") else cfg.order
    if np.unique(pts[:, 2]).size < fit_order + 1:
        raise DegenerateInputError("back-projected points span too few distinct depths")
    poly = fit_bev_polynomial(pts, order=fit_order)
    z_min = max(float(pts[:, 2].min()), Z_FLOOR)
    z_max = max(float(pts[:, 2].max()), z_min + MIN_SPAN)
    profile = fit_heights_direct(pts, cfg.keypoints, z_min, z_max)
    return Lane3D(curve=poly.to_curve(), profile=profile, score=1.0)


def reprojection_residuals(lane: Lane3D, k: CameraIntrinsics, gt3: np.ndarray) -> np.ndarray:
    """Pixel distance between projected labels and the lane evaluated at
    the same depths. Measures how faithfully the fitted representation
    reprojects, point by point."""
    gt3 = np.asarray(gt3, dtype=float)
    z = gt3[:, 2]
    pred = np.column_stack([lane.curve.x_at(z), lane.profile.y_at(z), z])
    d = project_points(k, pred) - project_points(k, gt3)
    return np.hypot(d[:, 0], d[:, 1])
