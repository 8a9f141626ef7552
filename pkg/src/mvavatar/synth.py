"""Synthetic benchmark scenes: ground-truth clothed subjects, a ring of
cameras at eye level, oracle observations, and noisy per-view initial
parameter estimates. Everything is reproducible from (subject seed, noise
seed)."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .body import BodyModel, BodyParams, joints3d, landmarks3d, skin
from .camera import Camera, load_cameras, look_at_camera, project_many, save_cameras
from .exceptions import ShapeMismatchError
from .fitting import ViewObservation
from .humanoid import default_model, pose_params
from .image_io import load_pfm, load_pgm_mask, save_pfm, save_pgm_mask
from .mesh import TriMesh
from .mesh_io import load_ply, save_ply
from .normal_maps import ClothedNormalMap
from .raster import DepthField, rasterize

DEFAULT_RIG_RADIUS = 2.5      # meters
DEFAULT_RESOLUTION = 256
DEFAULT_LANDMARK_SIGMA = 2.0  # pixels
DEFAULT_POSE_SIGMA = 0.09     # radians, ~5 degrees per joint
DEFAULT_TRANS_SIGMA = 0.05    # meters
OCCLUDED_CONFIDENCE = 0.2
VISIBILITY_DEPTH_TOL = 0.02   # relative depth slack for the visibility test
BUMP_RADIUS = 0.14            # meters; the synthetic "hood" on the back


def place_cameras(n: int, radius_m: float, eye_height_m: float, target,
                  resolution=DEFAULT_RESOLUTION, focal_px: float | None = None):
    """n cameras at angles 2*pi*k/n on a horizontal circle at eye height,
    looking at `target` with world-up roll. Index 0 is the frontal view and,
    for even n, index n/2 the back view."""
    if n < 1:
        raise ValueError("need at least one camera")
    if radius_m <= 0:
        raise ValueError("radius must be positive")
    if np.isscalar(resolution):
        width = height = int(resolution)
    else:
        width, height = (int(v) for v in resolution)
    if focal_px is None:
        focal_px = 0.8 * min(width, height)
    target = np.asarray(target, dtype=float)
    cams = []
    for k in range(n):
        angle = 2.0 * np.pi * k / n
        position = np.array(
            [target[0] + radius_m * np.sin(angle), eye_height_m,
             target[2] + radius_m * np.cos(angle)]
        )
        cams.append(look_at_camera(position, target, focal_px, focal_px, width, height))
    return cams


def _value_noise(points: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                 cells: int, rng: np.random.Generator) -> np.ndarray:
    """Trilinearly interpolated random lattice noise over the bbox [lo, hi]."""
    grid = rng.random((cells + 1, cells + 1, cells + 1))
    span = np.maximum(hi - lo, 1e-9)
    coords = (points - lo) / span * cells
    coords = np.clip(coords, 0.0, cells - 1e-9)
    i = coords.astype(int)
    f = coords - i
    out = np.zeros(len(points))
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (
                    (f[:, 0] if dx else 1 - f[:, 0])
                    * (f[:, 1] if dy else 1 - f[:, 1])
                    * (f[:, 2] if dz else 1 - f[:, 2])
                )
                out += w * grid[i[:, 0] + dx, i[:, 1] + dy, i[:, 2] + dz]
    return out


def bump_center(body: TriMesh) -> np.ndarray:
    """Deterministic anchor of the synthetic back bump: the most backward
    (-z) vertex on the upper torso band."""
    verts = body.vertices
    band = (verts[:, 1] > 1.15) & (verts[:, 1] < 1.55)
    if not band.any():
        band = np.ones(len(verts), dtype=bool)
    idx = np.nonzero(band)[0]
    return verts[idx[np.argmin(verts[idx, 2])]].copy()


def make_clothed(body: TriMesh, seed: int, amplitude_m: float) -> TriMesh:
    """Displace the body outward along vertex normals: smooth multi-octave
    noise in [0, amplitude] plus one localized bump on the back. The maximum
    displacement never exceeds the amplitude."""
    if amplitude_m < 0:
        raise ValueError("amplitude must be nonnegative")
    if amplitude_m == 0.0:
        return TriMesh(body.vertices, body.triangles)
    rng = np.random.default_rng(seed)
    verts = body.vertices
    normals = body.area_weighted_vertex_normals()
    lo, hi = body.bounds()
    noise = np.zeros(len(verts))
    for cells, weight in ((4, 1.0), (8, 0.5), (16, 0.25)):
        noise += weight * _value_noise(verts, lo, hi, cells, rng)
    noise -= noise.min()
    peak = noise.max()
    if peak > 0:
        noise /= peak
    center = bump_center(body)
    dist = np.linalg.norm(verts - center, axis=1)
    bump = np.exp(-((dist / BUMP_RADIUS) ** 2))
    displacement = amplitude_m * np.clip(0.8 * noise + 0.85 * bump, 0.0, 1.0)
    return TriMesh(verts + displacement[:, None] * normals, body.triangles)


def landmark_confidences(landmark_world: np.ndarray, cam: Camera, clothed_maps) -> np.ndarray:
    """Visibility-derived confidences: 1 when the landmark's depth agrees with
    the rendered clothed depth within 2% (relative), else 0.2."""
    px, z, valid = project_many(landmark_world, cam)
    conf = np.full(len(landmark_world), OCCLUDED_CONFIDENCE)
    pxi = np.round(px).astype(int)
    in_frame = (
        valid
        & (pxi[:, 0] >= 0) & (pxi[:, 0] < cam.width)
        & (pxi[:, 1] >= 0) & (pxi[:, 1] < cam.height)
    )
    for k in np.nonzero(in_frame)[0]:
        u, v = pxi[k]
        if clothed_maps.mask[v, u] and z[k] <= clothed_maps.depth[v, u] * (1 + VISIBILITY_DEPTH_TOL):
            conf[k] = 1.0
    return conf


def make_observations(cameras, gt_clothed: TriMesh, landmark_world: np.ndarray,
                      noise_sigma_px: float, seed: int):
    """Per-view oracle observations: rendered silhouette + clothed normal map,
    projected landmarks with seeded Gaussian pixel noise and visibility-based
    confidences. Returns (observations, raster_maps_per_view)."""
    rng = np.random.default_rng(seed)
    observations = []
    rasters = []
    for k, cam in enumerate(cameras):
        maps = rasterize(gt_clothed, cam, "front")
        frame = f"view_{k}"
        cmap = ClothedNormalMap.from_raster(maps, frame)
        conf = landmark_confidences(landmark_world, cam, maps)
        px, _, valid = project_many(landmark_world, cam)
        noisy = px + rng.normal(0.0, noise_sigma_px, px.shape)
        conf = np.where(valid, conf, 0.0)
        observations.append(
            ViewObservation(cam, maps.mask, cmap, noisy, conf, frame_id=frame)
        )
        rasters.append(maps)
    return observations, rasters


def perturb_estimates(gt: BodyParams, n_views: int, sigma_pose: float,
                      sigma_trans: float, seed: int):
    """Independent noisy copies of the ground-truth parameters, standing in
    for per-view single-image predictions."""
    if sigma_pose < 0 or sigma_trans < 0:
        raise ValueError("noise magnitudes must be nonnegative")
    rng = np.random.default_rng(seed)
    estimates = []
    for _ in range(n_views):
        beta = np.clip(gt.beta + rng.normal(0.0, sigma_pose * 10.0, gt.beta.shape), -5.0, 5.0)
        theta = gt.theta + rng.normal(0.0, sigma_pose, gt.theta.shape)
        glob = gt.global_rotation + rng.normal(0.0, sigma_pose, 3)
        trans = gt.global_translation + rng.normal(0.0, sigma_trans, 3)
        estimates.append(BodyParams(beta, theta, glob, trans))
    return estimates


@dataclass
class SyntheticScene:
    gt_params: BodyParams
    gt_body: TriMesh
    gt_clothed: TriMesh
    cameras: list
    observations: list
    noisy_estimates: list
    subject_seed: int
    noise_seed: int
    amplitude_m: float
    pose: str
    bump_center: np.ndarray
    bump_radius: float
    raster_maps: list = field(default_factory=list, repr=False)
    view_depths: list = field(default_factory=list, repr=False)

    @property
    def n_views(self) -> int:
        return len(self.cameras)


def make_scene(subject_seed: int, noise_seed: int, amplitude_m: float = 0.02,
               pose: str = "rest", n_views: int = 8,
               resolution: int = DEFAULT_RESOLUTION, radius_m: float = DEFAULT_RIG_RADIUS,
               landmark_sigma_px: float = DEFAULT_LANDMARK_SIGMA,
               pose_sigma: float = DEFAULT_POSE_SIGMA,
               trans_sigma: float = DEFAULT_TRANS_SIGMA,
               model: BodyModel | None = None) -> SyntheticScene:
    """Generate one fully reproducible synthetic scene."""
    model = model or default_model()
    rng = np.random.default_rng(subject_seed)
    gt_params = pose_params(model, pose)
    beta = np.clip(rng.normal(0.0, 0.7, model.n_shape), -2.0, 2.0)
    yaw = rng.uniform(-0.2, 0.2)
    gt_params = BodyParams(beta, gt_params.theta, [0.0, yaw, 0.0], np.zeros(3))

    gt_body = skin(model, gt_params)
    gt_clothed = make_clothed(gt_body, subject_seed, amplitude_m)

    eye_height = float(joints3d(model, gt_params)[model.head_joint][1])
    lo, hi = gt_clothed.bounds()
    target = np.array([(lo[0] + hi[0]) / 2.0, eye_height, (lo[2] + hi[2]) / 2.0])
    extent = float(np.max(np.linalg.norm(gt_clothed.vertices - target, axis=1))) + 0.05
    if extent >= radius_m:
        raise ValueError("camera ring radius too small for the subject")
    # focal that frames the subject fully in every view, with a small margin
    probes = place_cameras(n_views, radius_m, eye_height, target, resolution, focal_px=1.0)
    max_tan = 0.0
    for cam in probes:
        pc = cam.world_to_camera(gt_clothed.vertices)
        tans = np.abs(pc[:, :2]) / pc[:, 2:3]
        max_tan = max(max_tan, float(tans.max()))
    half = int(resolution) // 2 if np.isscalar(resolution) else min(resolution) // 2
    focal = (half - 6) / max_tan
    cameras = place_cameras(n_views, radius_m, eye_height, target, resolution, focal)

    lm_world = landmarks3d(model, gt_params)
    observations, rasters = make_observations(
        cameras, gt_clothed, lm_world, landmark_sigma_px, noise_seed
    )
    estimates = perturb_estimates(gt_params, n_views, pose_sigma, trans_sigma, noise_seed + 1)
    return SyntheticScene(
        gt_params=gt_params,
        gt_body=gt_body,
        gt_clothed=gt_clothed,
        cameras=cameras,
        observations=observations,
        noisy_estimates=estimates,
        subject_seed=subject_seed,
        noise_seed=noise_seed,
        amplitude_m=amplitude_m,
        pose=pose,
        bump_center=bump_center(gt_body),
        bump_radius=BUMP_RADIUS,
        raster_maps=rasters,
        view_depths=[m.depth_field() for m in rasters],
    )


# -- on-disk layout -------------------------------------------------------------
#
# scene/cameras.json
# scene/gt_clothed.ply, scene/gt_body.ply, scene/gt_params.json
# scene/view_{k}/{mask.pgm, normals.pfm, depth.pfm, landmarks.json}
# scene/estimates/view_{k}.json
# scene/scene_meta.json       (seeds, amplitude, pose, bump region)


def save_scene(scene: SyntheticScene, directory) -> None:
    directory = str(directory)
    os.makedirs(directory, exist_ok=True)
    save_cameras(os.path.join(directory, "cameras.json"), scene.cameras)
    save_ply(os.path.join(directory, "gt_clothed.ply"), scene.gt_clothed)
    save_ply(os.path.join(directory, "gt_body.ply"), scene.gt_body)
    scene.gt_params.save(os.path.join(directory, "gt_params.json"))
    est_dir = os.path.join(directory, "estimates")
    os.makedirs(est_dir, exist_ok=True)
    for k, est in enumerate(scene.noisy_estimates):
        est.save(os.path.join(est_dir, f"view_{k}.json"))
    for k, (obs, maps) in enumerate(zip(scene.observations, scene.raster_maps)):
        view_dir = os.path.join(directory, f"view_{k}")
        os.makedirs(view_dir, exist_ok=True)
        save_pgm_mask(os.path.join(view_dir, "mask.pgm"), obs.silhouette)
        save_pfm(os.path.join(view_dir, "normals.pfm"), obs.clothed_normals.normal.astype(np.float32))
        save_pfm(os.path.join(view_dir, "depth.pfm"), maps.depth.astype(np.float32))
        with open(os.path.join(view_dir, "landmarks.json"), "w") as fh:
            json.dump(
                {
                    "frame": obs.frame_id,
                    "pixels": obs.landmark_pixels.tolist(),
                    "confidences": obs.landmark_confidences.tolist(),
                },
                fh,
                indent=1,
            )
    with open(os.path.join(directory, "scene_meta.json"), "w") as fh:
        json.dump(
            {
                "subject_seed": scene.subject_seed,
                "noise_seed": scene.noise_seed,
                "amplitude_m": scene.amplitude_m,
                "pose": scene.pose,
                "bump_center": scene.bump_center.tolist(),
                "bump_radius": scene.bump_radius,
            },
            fh,
            indent=1,
        )


def load_scene(directory) -> SyntheticScene:
    directory = str(directory)
    cameras = load_cameras(os.path.join(directory, "cameras.json"))
    gt_clothed = load_ply(os.path.join(directory, "gt_clothed.ply"))
    gt_body = load_ply(os.path.join(directory, "gt_body.ply"))
    gt_params = BodyParams.load(os.path.join(directory, "gt_params.json"))
    with open(os.path.join(directory, "scene_meta.json")) as fh:
        meta = json.load(fh)
    observations = []
    estimates = []
    view_depths = []
    for k, cam in enumerate(cameras):
        view_dir = os.path.join(directory, f"view_{k}")
        mask = load_pgm_mask(os.path.join(view_dir, "mask.pgm"))
        depth = load_pfm(os.path.join(view_dir, "depth.pfm")).astype(np.float64)
        view_depths.append(DepthField(np.where(mask, depth, 0.0), mask))
        normal = load_pfm(os.path.join(view_dir, "normals.pfm")).astype(np.float64)
        if normal.shape[:2] != mask.shape:
            raise ShapeMismatchError(f"{view_dir}: normals and mask resolutions disagree")
        norms = np.linalg.norm(normal, axis=2)
        good = mask & (norms > 1e-12)
        unit = np.zeros_like(normal)
        unit[good] = normal[good] / norms[good][:, None]
        with open(os.path.join(view_dir, "landmarks.json")) as fh:
            lm = json.load(fh)
        cmap = ClothedNormalMap(unit, good, lm["frame"])
        observations.append(
            ViewObservation(cam, mask, cmap, lm["pixels"], lm["confidences"], lm["frame"])
        )
        estimates.append(BodyParams.load(os.path.join(directory, "estimates", f"view_{k}.json")))
    return SyntheticScene(
        gt_params=gt_params,
        gt_body=gt_body,
        gt_clothed=gt_clothed,
        cameras=cameras,
        observations=observations,
        noisy_estimates=estimates,
        subject_seed=meta["subject_seed"],
        noise_seed=meta["noise_seed"],
        amplitude_m=meta["amplitude_m"],
        pose=meta["pose"],
        bump_center=np.array(meta["bump_center"]),
        bump_radius=meta["bump_radius"],
        view_depths=view_depths,
    )


def benchmark_suite(n_subjects: int = 10, base_seed: int = 1000, **kwargs):
    """Scene specs for the repeatable benchmark: varied seeds, displacement
    amplitudes {0, 1, 2, 4} cm, and the three canonical poses."""
    amplitudes = [0.0, 0.01, 0.02, 0.04]
    poses = ["rest", "walking", "arms_raised"]
    specs = []
    for i in range(n_subjects):
        specs.append(
            dict(
                subject_seed=base_seed + 17 * i,
                noise_seed=base_seed + 17 * i + 7,
                amplitude_m=amplitudes[i % len(amplitudes)],
                pose=poses[i % len(poses)],
                **kwargs,
            )
        )
    return specs
