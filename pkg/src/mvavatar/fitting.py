"""Joint multi-view body fitting.

One body model is optimized against all views at once: a silhouette term and a
normal-map term (both rasterization-based, differentiated by central finite
differences), a confidence-weighted landmark reprojection term, and an upright
head regularizer (both with analytic gradients). Descent uses per-group step
sizes with halving on non-decrease, so the total-loss trace never increases.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .body import (
    BETA_BOX,
    BodyModel,
    BodyParams,
    head_pitch_with_jacobian,
    head_pitch_vector,
    landmarks3d,
    landmarks_with_jacobian,
    skin,
)
from .camera import Camera, project_many
from .exceptions import FrameMismatchError, InvalidInitializationError, ShapeMismatchError
from .normal_maps import ClothedNormalMap
from .raster import FRONT, render_arrays

logger = logging.getLogger(__name__)

UP = np.array([0.0, 1.0, 0.0])


class ViewObservation:
    """Per-view fitting targets: silhouette, clothed normals, 2D landmarks."""

    __slots__ = ("camera", "silhouette", "clothed_normals", "landmark_pixels",
                 "landmark_confidences", "frame_id")

    def __init__(self, camera: Camera, silhouette, clothed_normals: ClothedNormalMap,
                 landmark_pixels, landmark_confidences, frame_id: str):
        silhouette = np.asarray(silhouette, dtype=bool)
        if silhouette.shape != (camera.height, camera.width):
            raise ShapeMismatchError("silhouette resolution disagrees with the camera")
        landmark_pixels = np.asarray(landmark_pixels, dtype=np.float64).reshape(-1, 2)
        landmark_confidences = np.asarray(landmark_confidences, dtype=np.float64).reshape(-1)
        if len(landmark_pixels) != len(landmark_confidences):
            raise ShapeMismatchError("landmark pixel/confidence counts disagree")
        if np.any(landmark_confidences < 0) or np.any(landmark_confidences > 1):
            raise ValueError("landmark confidences must lie in [0, 1]")
        self.camera = camera
        self.silhouette = silhouette
        self.clothed_normals = clothed_normals
        self.landmark_pixels = landmark_pixels
        self.landmark_confidences = landmark_confidences
        self.frame_id = str(frame_id)


@dataclass
class FitConfig:
    lambda_n: float = 0.2
    lambda_l: float = 0.1
    lambda_h: float = 0.1
    max_iterations: int = 35
    step_beta: float = 1e-2
    step_theta: float = 1e-2        # radians; also used for the global rotation
    step_translation: float = 4e-3  # meters; must cover estimate noise within the
                                    # iteration budget (35 x 1 mm cannot reach 5 cm)
    # finite-difference probes must move silhouette boundaries by a usable
    # fraction of a pixel; sub-quantization epsilons measure only noise
    fd_eps_beta: float = 0.05
    fd_eps_theta: float = 0.01
    fd_eps_translation: float = 2e-3
    tolerance: float = 1e-4        # relative decrease, over 3 consecutive iterations
    gradient_resolution_divisor: int = 2  # FD probes render at (1/d) resolution
    metadata: dict = field(default_factory=lambda: {
        "silhouette_normalization": "per-pixel-mean-per-view-sum",
        "landmark_normalization": "image-diagonal",
    })

    def __post_init__(self):
        if min(self.lambda_n, self.lambda_l, self.lambda_h) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def to_dict(self) -> dict:
        return {
            "lambda_n": self.lambda_n, "lambda_l": self.lambda_l, "lambda_h": self.lambda_h,
            "max_iterations": self.max_iterations,
            "step_beta": self.step_beta, "step_theta": self.step_theta,
            "step_translation": self.step_translation,
            "fd_eps_beta": self.fd_eps_beta, "fd_eps_theta": self.fd_eps_theta,
            "fd_eps_translation": self.fd_eps_translation,
            "tolerance": self.tolerance, "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class LossBreakdown:
    silhouette: float
    normal: float
    landmark: float
    head: float
    total: float

    @classmethod
    def combine(cls, sil, nrm, lmk, head, cfg: FitConfig) -> "LossBreakdown":
        sil, nrm, lmk, head = float(sil), float(nrm), float(lmk), float(head)
        total = sil + cfg.lambda_n * nrm + cfg.lambda_l * lmk + cfg.lambda_h * head
        return cls(sil, nrm, lmk, head, total)


@dataclass
class FitResult:
    params: BodyParams
    loss_trace: list
    iterations_run: int
    behind_camera_events: int = 0
    stop_reason: str = ""


# -- loss terms ----------------------------------------------------------------


def _check_views(model: BodyModel, views):
    if not views:
        raise ValueError("at least one view is required")
    for view in views:
        if len(view.landmark_pixels) != model.n_landmarks:
            raise ShapeMismatchError(
                f"view has {len(view.landmark_pixels)} landmarks, model defines "
                f"{model.n_landmarks}"
            )


def _raster_losses(params: BodyParams, model: BodyModel, views) -> tuple:
    """Silhouette and normal terms from one rasterization per view."""
    mesh = skin(model, params)
    sil = 0.0
    nrm = 0.0
    for view in views:
        mask, normal, _, _ = render_arrays(mesh, view.camera, FRONT)
        if mask.shape != view.silhouette.shape:
            raise ShapeMismatchError("rendered and observed silhouettes disagree in size")
        sil += float(np.mean(mask != view.silhouette))
        cmap = view.clothed_normals
        if cmap.frame != view.frame_id:
            raise FrameMismatchError(
                f"normal map frame '{cmap.frame}' does not match view '{view.frame_id}'"
            )
        overlap = mask & cmap.mask
        if overlap.any():
            diff = np.abs(normal[overlap] - cmap.normal[overlap]).sum(axis=1)
            nrm += float(diff.mean())
    return sil, nrm


def loss_silhouette(params: BodyParams, model: BodyModel, views) -> float:
    """Sum over views of the mean per-pixel |S_body - S_observed| over the frame."""
    _check_views(model, views)
    return _raster_losses(params, model, views)[0]


def loss_normals(params: BodyParams, model: BodyModel, views) -> float:
    """Sum over views of the mean L1 normal difference on the mask overlap."""
    _check_views(model, views)
    return _raster_losses(params, model, views)[1]


def _landmark_loss(params, model, views, with_grad: bool):
    if with_grad:
        world, jac = landmarks_with_jacobian(model, params)
    else:
        world = landmarks3d(model, params)
        jac = None
    total = 0.0
    grad = np.zeros(model.n_params()) if with_grad else None
    behind = 0
    for view in views:
        cam = view.camera
        px, z, valid = project_many(world, cam)
        conf = view.landmark_confidences.copy()
        behind += int(np.sum(~valid & (conf > 0)))
        conf[~valid] = 0.0
        csum = conf.sum()
        if csum <= 0:
            continue
        diag = cam.diagonal_px
        diff = px - view.landmark_pixels
        dist = np.linalg.norm(diff, axis=1)
        total += float(conf @ dist) / (csum * diag)
        if with_grad:
            pc = cam.world_to_camera(world)
            for k in np.nonzero(conf > 0)[0]:
                if dist[k] < 1e-12:
                    continue
                x, y, zz = pc[k]
                dpix = np.array(
                    [[cam.fx / zz, 0.0, -cam.fx * x / zz**2],
                     [0.0, cam.fy / zz, -cam.fy * y / zz**2]]
                ) @ cam.rotation
                ddist_dworld = (diff[k] / dist[k]) @ dpix
                grad += (conf[k] / (csum * diag)) * (ddist_dworld @ jac[k])
    return total, grad, behind


def loss_landmarks(params: BodyParams, model: BodyModel, views) -> float:
    """Confidence-weighted mean reprojection distance, normalized by the image
    diagonal, summed over views. Landmarks behind a camera count as confidence 0."""
    _check_views(model, views)
    value, _, behind = _landmark_loss(params, model, views, with_grad=False)
    if behind:
        logger.debug("landmark loss: %d landmark projections behind a camera", behind)
    return value


def loss_head(params: BodyParams, model: BodyModel) -> float:
    """1 - cos(angle) between the head pitch vector and world-up."""
    return float(1.0 - head_pitch_vector(model, params) @ UP)


def total_loss(params: BodyParams, model: BodyModel, views, cfg: FitConfig) -> LossBreakdown:
    _check_views(model, views)
    sil, nrm = _raster_losses(params, model, views)
    lmk, _, _ = _landmark_loss(params, model, views, with_grad=False)
    head = loss_head(params, model)
    return LossBreakdown.combine(sil, nrm, lmk, head, cfg)


# -- optimizer -----------------------------------------------------------------


def _downsample_view(view: ViewObservation, d: int) -> ViewObservation:
    """Strided subsampling is exactly a camera with fx, cx, and resolution
    divided by d (pixel (u', v') maps to full-resolution pixel (d*u', d*v'))."""
    cam = view.camera
    mask = view.silhouette[::d, ::d]
    h, w = mask.shape
    small_cam = Camera(cam.fx / d, cam.fy / d, cam.cx / d, cam.cy / d, w, h,
                       cam.rotation, cam.translation)
    cmap = view.clothed_normals
    small_map = ClothedNormalMap(cmap.normal[::d, ::d].copy(), cmap.mask[::d, ::d].copy(),
                                 cmap.frame)
    return ViewObservation(small_cam, mask.copy(), small_map,
                           view.landmark_pixels / d, view.landmark_confidences,
                           view.frame_id)


def _group_vectors(model: BodyModel, cfg: FitConfig):
    slices = model.param_slices()
    n_p = model.n_params()
    steps = np.empty(n_p)
    eps = np.empty(n_p)
    steps[slices["beta"]] = cfg.step_beta
    steps[slices["theta"]] = cfg.step_theta
    steps[slices["global_rotation"]] = cfg.step_theta
    steps[slices["global_translation"]] = cfg.step_translation
    eps[slices["beta"]] = cfg.fd_eps_beta
    eps[slices["theta"]] = cfg.fd_eps_theta
    eps[slices["global_rotation"]] = cfg.fd_eps_theta
    eps[slices["global_translation"]] = cfg.fd_eps_translation
    return steps, eps


def _clamp_beta(model: BodyModel, vec: np.ndarray) -> np.ndarray:
    s = model.param_slices()["beta"]
    vec[s] = np.clip(vec[s], -BETA_BOX, BETA_BOX)
    return vec


def optimize(model: BodyModel, views, init: BodyParams, cfg: FitConfig | None = None) -> FitResult:
    """Accepted-step first-order descent on the total loss.

    Silhouette/normal gradients come from central finite differences per
    parameter (clipped to the beta box at its boundary); landmark and head
    gradients are analytic. The returned trace is monotonically non-increasing
    and the final parameters never lose to the initialization.
    """
    cfg = cfg or FitConfig()
    _check_views(model, views)
    steps, eps = _group_vectors(model, cfg)
    d = max(int(cfg.gradient_resolution_divisor), 1)
    min_res = min(min(v.camera.height, v.camera.width) for v in views)
    while d > 1 and min_res // d < 96:  # probes need enough pixels to see boundaries
        d -= 1
    grad_views = [_downsample_view(v, d) for v in views] if d > 1 else views

    vec = _clamp_beta(model, init.to_vector().copy())
    behind_total = 0

    def evaluate(v) -> LossBreakdown:
        nonlocal behind_total
        params = BodyParams.from_vector(model, v)
        sil, nrm = _raster_losses(params, model, views)
        lmk, _, behind = _landmark_loss(params, model, views, with_grad=False)
        behind_total += behind
        return LossBreakdown.combine(sil, nrm, lmk, loss_head(params, model), cfg)

    current = evaluate(vec)
    if not np.isfinite(current.total):
        raise InvalidInitializationError(f"non-finite loss at initialization: {current}")
    trace = [current]

    scale = 1.0
    min_scale = 2.0**-12
    slow_iterations = 0
    iterations = 0
    stop_reason = "max_iterations"

    group_slices = list(model.param_slices().values())
    for _ in range(cfg.max_iterations):
        grad = _total_gradient(model, grad_views, vec, eps, cfg)
        # fixed per-group step along the sign of the gradient: robust to the
        # stair-stepped response of pixel-quantized loss terms
        direction = steps * np.sign(grad)
        accepted = False
        while scale >= min_scale:
            cand = _clamp_beta(model, vec - scale * direction)
            cand_loss = evaluate(cand)
            if np.isfinite(cand_loss.total) and cand_loss.total < current.total:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            # a mixed-quality gradient can block the joint move; single
            # parameter groups often still have a descent step
            for sl in group_slices:
                group_dir = np.zeros_like(direction)
                group_dir[sl] = direction[sl]
                group_scale = 1.0
                for _ in range(8):
                    cand = _clamp_beta(model, vec - group_scale * group_dir)
                    cand_loss = evaluate(cand)
                    if np.isfinite(cand_loss.total) and cand_loss.total < current.total:
                        accepted = True
                        break
                    group_scale *= 0.5
                if accepted:
                    scale = max(scale, group_scale)
                    break
        if not accepted:
            stop_reason = "no_decreasing_step"
            break
        # recover step length after accepted moves so one bad gradient does
        # not pin the optimizer at a tiny scale
        scale = min(scale * 2.0, 1.0)
        rel_drop = (current.total - cand_loss.total) / max(current.total, 1e-30)
        vec = cand
        current = cand_loss
        trace.append(current)
        iterations += 1
        slow_iterations = slow_iterations + 1 if rel_drop < cfg.tolerance else 0
        if slow_iterations >= 3:
            stop_reason = "converged"
            break

    return FitResult(
        params=BodyParams.from_vector(model, vec),
        loss_trace=trace,
        iterations_run=iterations,
        behind_camera_events=behind_total,
        stop_reason=stop_reason,
    )


def _total_gradient(model: BodyModel, views, vec: np.ndarray, eps: np.ndarray,
                    cfg: FitConfig) -> np.ndarray:
    """Finite differences for the raster terms + analytic landmark/head parts."""
    n_p = len(vec)
    grad = np.zeros(n_p)
    beta_slice = model.param_slices()["beta"]
    for p in range(n_p):
        hi = vec[p] + eps[p]
        lo = vec[p] - eps[p]
        if beta_slice.start <= p < beta_slice.stop:
            hi = min(hi, BETA_BOX)
            lo = max(lo, -BETA_BOX)
        if hi <= lo:
            continue
        v_hi = vec.copy()
        v_hi[p] = hi
        v_lo = vec.copy()
        v_lo[p] = lo
        sil_hi, nrm_hi = _raster_losses(BodyParams.from_vector(model, v_hi), model, views)
        sil_lo, nrm_lo = _raster_losses(BodyParams.from_vector(model, v_lo), model, views)
        grad[p] = ((sil_hi + cfg.lambda_n * nrm_hi) - (sil_lo + cfg.lambda_n * nrm_lo)) / (hi - lo)

    params = BodyParams.from_vector(model, vec)
    _, lmk_grad, _ = _landmark_loss(params, model, views, with_grad=True)
    _, head_jac = head_pitch_with_jacobian(model, params)
    head_grad = -(UP @ head_jac)
    return grad + cfg.lambda_l * lmk_grad + cfg.lambda_h * head_grad


def write_loss_trace(path, trace) -> None:
    """CSV trace: iteration, silhouette, normal, landmark, head, total."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "silhouette", "normal", "landmark", "head", "total"])
        for i, row in enumerate(trace):
            writer.writerow([i, repr(row.silhouette), repr(row.normal),
                             repr(row.landmark), repr(row.head), repr(row.total)])


def read_loss_trace(path):
    trace = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            trace.append(LossBreakdown(
                float(row["silhouette"]), float(row["normal"]), float(row["landmark"]),
                float(row["head"]), float(row["total"]),
            ))
    return trace
