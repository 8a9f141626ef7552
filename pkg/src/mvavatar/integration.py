"""Depth-anchored bilateral normal integration.

Lifts front/back normal maps (on one shared pixel grid) to depth fields. Per
surface the objective sums one-sided slope residuals with bilateral logistic
weights (re-estimated each outer iteration), a quadratic pull toward the body
depth prior, and a front/back coupling term on the shared silhouette boundary
ring. Inner problems are SPD least squares solved by Jacobi-preconditioned
conjugate gradients.

Orthographic slopes are z_u = -n_x/n_z * pixel_scale (front normals point
toward the camera, n_z < 0; back normals away, n_z > 0 -- one formula covers
both). Perspective mode integrates log-depth with the standard ray-denominator
slopes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .camera import Camera
from .exceptions import EmptySurfaceError, UnanchoredGaugeError
from .normal_maps import ClothedNormalMap
from .raster import DepthField

MIN_NZ = 1e-3  # below this the slope formula blows up: pixel demoted to prior-only
MAX_SLOPE = 4.0  # per pixel step; grazing surfaces (>~76 deg) are real silhouette
                 # discontinuities, and uncapped slopes integrate to garbage depths

ORTHOGRAPHIC = "orthographic"
PERSPECTIVE = "perspective"


@dataclass
class IntegrationConfig:
    sharpness: float = 2.0          # one-sided weight sharpness k
    prior_weight: float = 1e-4      # depth-prior pull
    coupling_weight: float = 1e-3   # front/back boundary coupling
    outer_iterations: int = 5
    solver_tolerance: float = 1e-8  # relative residual of the inner solve
    projection: str = ORTHOGRAPHIC
    pixel_scale_m: float = 1.0      # meters per pixel step (orthographic mode)

    def __post_init__(self):
        if min(self.sharpness, self.prior_weight, self.coupling_weight) < 0:
            raise ValueError("weights must be nonnegative")
        if self.outer_iterations < 1:
            raise ValueError("outer_iterations must be >= 1")
        if self.projection not in (ORTHOGRAPHIC, PERSPECTIVE):
            raise ValueError(f"unknown projection '{self.projection}'")

    def to_dict(self) -> dict:
        return {
            "sharpness": self.sharpness, "prior_weight": self.prior_weight,
            "coupling_weight": self.coupling_weight,
            "outer_iterations": self.outer_iterations,
            "solver_tolerance": self.solver_tolerance,
            "projection": self.projection, "pixel_scale_m": self.pixel_scale_m,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IntegrationConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class IntegrationProblem:
    normals_front: ClothedNormalMap
    normals_back: ClothedNormalMap
    prior_front: DepthField
    prior_back: DepthField
    camera: Camera
    boundary_ring: np.ndarray | None = field(default=None)

    def __post_init__(self):
        shapes = {
            self.normals_front.resolution, self.normals_back.resolution,
            self.prior_front.resolution, self.prior_back.resolution,
        }
        if len(shapes) != 1:
            raise ValueError("all four maps must share one resolution")


def harmonize_masks(problem: IntegrationProblem) -> IntegrationProblem:
    """Intersect prior masks with their normal masks and extract the shared
    silhouette boundary ring used by the coupling term."""
    common = problem.normals_front.mask & problem.normals_back.mask
    if not common.any():
        raise EmptySurfaceError("front and back masks are disjoint")
    interior = np.zeros_like(common)
    interior[1:-1, 1:-1] = (
        common[1:-1, 1:-1]
        & common[:-2, 1:-1] & common[2:, 1:-1]
        & common[1:-1, :-2] & common[1:-1, 2:]
    )
    ring = common & ~interior

    def restrict(prior: DepthField, normal_mask) -> DepthField:
        new_mask = prior.mask & normal_mask
        return DepthField(np.where(new_mask, prior.depth, 0.0), new_mask)

    return IntegrationProblem(
        normals_front=problem.normals_front,
        normals_back=problem.normals_back,
        prior_front=restrict(problem.prior_front, problem.normals_front.mask),
        prior_back=restrict(problem.prior_back, problem.normals_back.mask),
        camera=problem.camera,
        boundary_ring=ring,
    )


def _slopes(cmap: ClothedNormalMap, cam: Camera, cfg: IntegrationConfig):
    """Per-pixel (p, q) depth slopes and the demotion mask."""
    n = cmap.normal
    h, w = cmap.resolution
    if cfg.projection == ORTHOGRAPHIC:
        denom = n[..., 2]
        bad = cmap.mask & (np.abs(denom) < MIN_NZ)
        safe = np.where(np.abs(denom) < MIN_NZ, 1.0, denom)
        cap = MAX_SLOPE * cfg.pixel_scale_m
        p = np.clip(-n[..., 0] / safe * cfg.pixel_scale_m, -cap, cap)
        q = np.clip(-n[..., 1] / safe * cfg.pixel_scale_m, -cap, cap)
    else:
        us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
        ut = (us - cam.cx) / cam.fx
        vt = (vs - cam.cy) / cam.fy
        denom = n[..., 0] * ut + n[..., 1] * vt + n[..., 2]
        bad = cmap.mask & (np.abs(denom) < MIN_NZ)
        safe = np.where(np.abs(denom) < MIN_NZ, 1.0, denom)
        p = np.clip(-n[..., 0] / (cam.fx * safe), -MAX_SLOPE / cam.fx, MAX_SLOPE / cam.fx)
        q = np.clip(-n[..., 1] / (cam.fy * safe), -MAX_SLOPE / cam.fy, MAX_SLOPE / cam.fy)
    p = np.where(bad, 0.0, p)
    q = np.where(bad, 0.0, q)
    return p, q, bad


class _Surface:
    """Index bookkeeping and slope-pair lists for one masked depth field."""

    def __init__(self, cmap: ClothedNormalMap, prior: DepthField, cam: Camera,
                 cfg: IntegrationConfig, offset: int):
        self.mask = cmap.mask
        self.n_px = int(self.mask.sum())
        self.index = np.full(self.mask.shape, -1, dtype=np.int64)
        vs, us = np.nonzero(self.mask)
        self.index[vs, us] = offset + np.arange(self.n_px)
        self.offset = offset
        p, q, demoted = _slopes(cmap, cam, cfg)
        self.demoted_count = int(demoted.sum())
        self.pairs = []  # (i_idx, j_idx, slope) for z[j] - z[i] = slope, per axis/side
        ok = self.mask & ~demoted
        for axis_slopes, dv, du in ((q, 1, 0), (p, 0, 1)):
            src = ok & np.roll(self.mask, (-dv, -du), axis=(0, 1))
            if dv:
                src[-1, :] = False
            if du:
                src[:, -1] = False
            vs, us = np.nonzero(src)
            self.pairs.append(
                (self.index[vs, us], self.index[vs + dv, us + du], axis_slopes[vs, us])
            )
            src = ok & np.roll(self.mask, (dv, du), axis=(0, 1))
            if dv:
                src[0, :] = False
            if du:
                src[:, 0] = False
            vs, us = np.nonzero(src)
            self.pairs.append(
                (self.index[vs - dv, us - du], self.index[vs, us], axis_slopes[vs, us])
            )
        self.prior_idx = self.index[prior.mask & self.mask]
        self.prior_val = prior.depth[prior.mask & self.mask]

    def initial_depth(self) -> np.ndarray:
        z = np.zeros(self.n_px)
        if len(self.prior_idx):
            z[:] = float(np.median(self.prior_val))
            z[self.prior_idx - self.offset] = self.prior_val
        return z


def integrate(problem: IntegrationProblem, cfg: IntegrationConfig | None = None):
    """Recover front/back depth fields from the normal maps.

    Returns (front DepthField, back DepthField, report dict). The reported
    objective trace is non-increasing: an outer step that would increase the
    bilaterally weighted objective is reverted and iteration stops.
    """
    cfg = cfg or IntegrationConfig()
    if problem.boundary_ring is None:
        problem = harmonize_masks(problem)
    cam = problem.camera
    log_space = cfg.projection == PERSPECTIVE

    front = _Surface(problem.normals_front, problem.prior_front, cam, cfg, 0)
    back = _Surface(problem.normals_back, problem.prior_back, cam, cfg, front.n_px)
    if front.n_px == 0 or back.n_px == 0:
        raise EmptySurfaceError("a surface has an empty mask")
    surfaces = [front, back]
    n = front.n_px + back.n_px

    prior_idx = np.concatenate([s.prior_idx for s in surfaces])
    prior_val = np.concatenate([s.prior_val for s in surfaces])
    if log_space:
        prior_val = np.log(prior_val)
    ring = problem.boundary_ring
    ring_f = front.index[ring]
    ring_b = back.index[ring]
    ring_ok = (ring_f >= 0) & (ring_b >= 0)
    ring_f, ring_b = ring_f[ring_ok], ring_b[ring_ok]

    anchored = cfg.prior_weight > 0 and len(prior_idx) > 0
    coupled = cfg.coupling_weight > 0 and len(ring_f) > 0
    if not anchored and not coupled:
        raise UnanchoredGaugeError("no prior pixels and no coupling: depth gauge is free")

    z = np.concatenate([s.initial_depth() for s in surfaces])
    if log_space:
        z = np.log(np.maximum(z, 1e-6))

    def pair_arrays():
        i_all, j_all, s_all = [], [], []
        for s in surfaces:
            for i_idx, j_idx, slope in s.pairs:
                i_all.append(i_idx)
                j_all.append(j_idx)
                s_all.append(slope)
        return (np.concatenate(i_all) if i_all else np.zeros(0, np.int64),
                np.concatenate(j_all) if j_all else np.zeros(0, np.int64),
                np.concatenate(s_all) if s_all else np.zeros(0))

    pi, pj, ps = pair_arrays()

    def residuals(zv):
        return zv[pj] - zv[pi] - ps

    def bilateral_weights(zv):
        # pairs were appended per axis as (forward Fwd, backward Bwd) blocks per
        # surface; recompute partner residuals by matching blocks
        w = np.full(len(pi), 0.5)
        pos = 0
        for s in surfaces:
            for a in range(0, len(s.pairs), 2):
                fi, fj, fs = s.pairs[a]
                bi, bj, bs = s.pairs[a + 1]
                nf, nb = len(fs), len(bs)
                rf = zv[fj] - zv[fi] - fs
                rb = zv[bj] - zv[bi] - bs
                # map pixels: forward residual belongs to pixel fi; backward to bj
                # weight for a pixel's forward term uses its own backward term
                r_back_of = np.zeros(n)
                r_back_of[bj] = rb
                has_back = np.zeros(n, dtype=bool)
                has_back[bj] = True
                wf = np.where(
                    has_back[fi],
                    1.0 / (1.0 + np.exp(-cfg.sharpness * (r_back_of[fi] ** 2 - rf**2))),
                    0.5,
                )
                r_fwd_of = np.zeros(n)
                r_fwd_of[fi] = rf
                has_fwd = np.zeros(n, dtype=bool)
                has_fwd[fi] = True
                wb = np.where(
                    has_fwd[bj],
                    1.0 / (1.0 + np.exp(-cfg.sharpness * (rb**2 - r_fwd_of[bj] ** 2))),
                    0.5,
                )
                w[pos:pos + nf] = wf
                w[pos + nf:pos + nf + nb] = wb
                pos += nf + nb
        return w

    def objective(zv, w):
        r = residuals(zv)
        val = float(w @ (r * r))
        if anchored:
            d = zv[prior_idx] - prior_val
            val += cfg.prior_weight * float(d @ d)
        if coupled:
            g = zv[ring_f] - zv[ring_b]
            val += cfg.coupling_weight * float(g @ g)
        return val

    def gauge_shift(zv):
        if anchored:
            return float(np.mean(prior_val - zv[prior_idx]))
        return 0.0

    objective_trace = []
    cg_iters_total = 0
    weights = np.full(len(pi), 0.5)
    for outer in range(cfg.outer_iterations):
        if outer > 0:
            weights = bilateral_weights(z)
        rows = np.concatenate([pi, pj, pi, pj])
        cols = np.concatenate([pi, pj, pj, pi])
        vals = np.concatenate([weights, weights, -weights, -weights])
        b = np.zeros(n)
        np.add.at(b, pj, weights * ps)
        np.add.at(b, pi, -weights * ps)
        if anchored:
            rows = np.concatenate([rows, prior_idx])
            cols = np.concatenate([cols, prior_idx])
            vals = np.concatenate([vals, np.full(len(prior_idx), cfg.prior_weight)])
            np.add.at(b, prior_idx, cfg.prior_weight * prior_val)
        if coupled:
            rows = np.concatenate([rows, ring_f, ring_b, ring_f, ring_b])
            cols = np.concatenate([cols, ring_f, ring_b, ring_b, ring_f])
            cw = np.full(len(ring_f), cfg.coupling_weight)
            vals = np.concatenate([vals, cw, cw, -cw, -cw])
        mat = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()

        z_new, iters = _jacobi_pcg(mat, b, z.copy(), cfg.solver_tolerance, 10 * n)
        cg_iters_total += iters
        z_new += gauge_shift(z_new)
        val = objective(z_new, weights)
        if objective_trace and val > objective_trace[-1] + 1e-12:
            break  # revert: keep previous z, stop reweighting
        z = z_new
        objective_trace.append(val)

    r_final = residuals(z)
    report = {
        "rms_normal_residual": float(np.sqrt(np.mean(r_final**2))) if len(r_final) else 0.0,
        "rms_prior_deviation": (
            float(np.sqrt(np.mean((z[prior_idx] - prior_val) ** 2))) if len(prior_idx) else 0.0
        ),
        "boundary_gap_max": (
            float(np.max(np.abs(z[ring_f] - z[ring_b]))) if len(ring_f) else 0.0
        ),
        "objective_trace": objective_trace,
        "demoted_pixels": {"front": front.demoted_count, "back": back.demoted_count},
        "cg_iterations": cg_iters_total,
        "outer_iterations_run": len(objective_trace),
    }

    if log_space:
        z = np.exp(z)
    z_front = np.zeros(front.mask.shape)
    z_front[front.mask] = z[:front.n_px]
    z_back = np.zeros(back.mask.shape)
    z_back[back.mask] = z[front.n_px:]
    return (
        DepthField(z_front, front.mask.copy()),
        DepthField(z_back, back.mask.copy()),
        report,
    )


def _jacobi_pcg(mat, b, x, tol, max_iter):
    """Conjugate gradients with diagonal preconditioning; relative-residual stop."""
    diag = mat.diagonal()
    inv_diag = np.where(diag > 1e-300, 1.0 / np.maximum(diag, 1e-300), 0.0)
    r = b - mat @ x
    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        return np.zeros_like(b), 0
    s = inv_diag * r
    p = s.copy()
    rs = float(r @ s)
    it = 0
    while it < max_iter and float(np.linalg.norm(r)) > tol * norm_b:
        ap = mat @ p
        denom = float(p @ ap)
        if denom <= 0:
            break
        alpha = rs / denom
        x += alpha * p
        r -= alpha * ap
        s = inv_diag * r
        rs_new = float(r @ s)
        p = s + (rs_new / rs) * p
        rs = rs_new
        it += 1
    return x, it


def save_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1)
