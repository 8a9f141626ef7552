"""End-to-end reconstruction pipeline and run comparison.

Stage order: initialize (average the selected per-view estimates), fit the
body across the selected views, render body priors through the front camera,
obtain front/back clothed normal maps (the back map comes from the back view,
rotated into the front frame and warped onto the front grid through the prior
back depth; a 1-view run falls back to the prior's own smooth back layer),
integrate to depth, lift to partial surfaces, fuse, and optionally evaluate.
Every stage writes its artifacts; runs resume from the manifest.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .body import BodyModel, BodyParams, average_params, skin
from .camera import Camera, project_many, relative_rotation, unproject_grid
from .exceptions import ComparisonError, StageError
from .fitting import FitConfig, ViewObservation, optimize, write_loss_trace
from .fusion import FuseConfig, assemble_cloud, fuse, save_diagnostics
from .humanoid import default_model
from .image_io import save_pfm, save_pgm_mask
from .integration import IntegrationConfig, IntegrationProblem, integrate, save_report
from .mesh import TriMesh
from .mesh_io import load_ply, save_obj, save_ply
from .metrics import MetricConfig, MetricReport, aggregate_reports, evaluate_pair, report_table
from .normal_maps import ClothedNormalMap, save_normal_map
from .raster import DepthField, rasterize
from .synth import SyntheticScene, load_scene

OUT_ROOT_ENV = "MVAVATAR_OUT"

ORACLE = "oracle"
FILE = "file"


@dataclass
class PipelineConfig:
    views: object = "all"            # 1 | 2 | "all" | explicit index list
    provider: str = ORACLE           # clothed-normal source: oracle | file
    seed: int = 0                    # root seed (metric sampling etc.)
    fit: FitConfig = field(default_factory=FitConfig)
    # pipeline-level defaults: a firmer depth anchor keeps the partial
    # surfaces on the body, and the filler radius must stay below the limb
    # radius or arm/leg sides never receive closing points
    integration: IntegrationConfig = field(
        default_factory=lambda: IntegrationConfig(prior_weight=1e-2)
    )
    fusion: FuseConfig = field(
        default_factory=lambda: FuseConfig(filler_exclusion_radius_m=0.015)
    )
    metrics: MetricConfig = field(default_factory=MetricConfig)
    evaluate: bool = True
    label: str = ""

    def __post_init__(self):
        if self.provider not in (ORACLE, FILE):
            raise ValueError(f"provider must be '{ORACLE}' or '{FILE}'")

    def to_dict(self) -> dict:
        return {
            "views": self.views,
            "provider": self.provider,
            "seed": self.seed,
            "fit": self.fit.to_dict(),
            "integration": self.integration.to_dict(),
            "fusion": self.fusion.to_dict(),
            "metrics": self.metrics.to_dict(),
            "evaluate": self.evaluate,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        kwargs = dict(d)
        if "fit" in kwargs:
            kwargs["fit"] = FitConfig.from_dict(kwargs["fit"])
        if "integration" in kwargs:
            kwargs["integration"] = IntegrationConfig.from_dict(kwargs["integration"])
        if "fusion" in kwargs:
            kwargs["fusion"] = FuseConfig.from_dict(kwargs["fusion"])
        if "metrics" in kwargs:
            kwargs["metrics"] = MetricConfig.from_dict(kwargs["metrics"])
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in kwargs.items() if k in known})


def select_views(n_total: int, selector) -> list:
    """1 -> front only; 2 -> front+back {0, n/2}; 'all' -> everything;
    a list selects explicit indices."""
    if isinstance(selector, str):
        if selector == "all":
            return list(range(n_total))
        selector = int(selector)
    if isinstance(selector, int):
        if selector == 1:
            return [0]
        if selector == 2:
            if n_total < 2:
                raise ValueError("2-view mode needs at least 2 cameras")
            return [0, n_total // 2]
        if selector == n_total:
            return list(range(n_total))
        raise ValueError(f"view count {selector} is not 1, 2, or {n_total}")
    idx = [int(i) for i in selector]
    if any(i < 0 or i >= n_total for i in idx):
        raise ValueError(f"view indices {idx} out of range for {n_total} cameras")
    if not idx:
        raise ValueError("empty view selection")
    return idx


class RunManifest:
    """Per-run record: config snapshot, stage artifacts + timings, seed
    registry, references to the trace, metrics, and final mesh."""

    def __init__(self, out_dir: str, config: PipelineConfig, gt_reference: str,
                 scene_meta: dict):
        self.out_dir = str(out_dir)
        self.data = {
            "config": config.to_dict(),
            "gt_reference": gt_reference,
            "scene_meta": scene_meta,
            "stages": {},
            "seed_registry": {"root": config.seed},
            "view_count": None,
            "views_used": {},
            "label": config.label,
        }

    @property
    def path(self) -> str:
        return os.path.join(self.out_dir, "manifest.json")

    def stage_done(self, name: str) -> bool:
        rec = self.data["stages"].get(name)
        if not rec:
            return False
        return all(os.path.exists(os.path.join(self.out_dir, p))
                   for p in rec["outputs"].values())

    def record_stage(self, name: str, elapsed: float, outputs: dict,
                     config_hash: str, views_used=None) -> None:
        self.data["stages"][name] = {
            "elapsed_s": elapsed,
            "outputs": outputs,
            "config_hash": config_hash,
        }
        if views_used is not None:
            self.data["views_used"][name] = list(views_used)

    def output(self, stage: str, key: str) -> str:
        return os.path.join(self.out_dir, self.data["stages"][stage]["outputs"][key])

    def save(self) -> None:
        for rec in self.data["stages"].values():
            for rel in rec["outputs"].values():
                if not os.path.exists(os.path.join(self.out_dir, rel)):
                    raise FileNotFoundError(f"manifest references missing file {rel}")
        with open(self.path, "w") as fh:
            json.dump(self.data, fh, indent=1)

    @classmethod
    def load(cls, out_dir) -> "RunManifest":
        out_dir = str(out_dir)
        with open(os.path.join(out_dir, "manifest.json")) as fh:
            data = json.load(fh)
        manifest = cls.__new__(cls)
        manifest.out_dir = out_dir
        manifest.data = data
        return manifest


def _hash_config(*parts) -> str:
    payload = json.dumps(parts, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


class _Stage:
    """Context helper: times a stage and converts failures to StageError."""

    def __init__(self, runner, name):
        self.runner = runner
        self.name = name
        self.t0 = None

    def __enter__(self):
        self.t0 = time.time()
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None:
            # persist the partial manifest before surfacing the failure
            try:
                self.runner.manifest.save()
            except Exception:
                pass
            if not isinstance(exc, StageError):
                raise StageError(self.name, str(exc)) from exc
        return False

    def done(self, outputs: dict, config_hash: str, views_used=None):
        self.runner.manifest.record_stage(
            self.name, time.time() - self.t0, outputs, config_hash, views_used
        )


class PipelineRunner:
    def __init__(self, scene: SyntheticScene, cfg: PipelineConfig, out_dir,
                 gt_reference: str, model: BodyModel | None = None, resume: bool = False):
        self.scene = scene
        self.cfg = cfg
        self.out_dir = str(out_dir)
        os.makedirs(self.out_dir, exist_ok=True)
        self.model = model or default_model()
        self.resume = resume
        scene_meta = {
            "subject_seed": scene.subject_seed,
            "noise_seed": scene.noise_seed,
            "amplitude_m": scene.amplitude_m,
            "pose": scene.pose,
        }
        if resume and os.path.exists(os.path.join(self.out_dir, "manifest.json")):
            self.manifest = RunManifest.load(self.out_dir)
        else:
            self.manifest = RunManifest(self.out_dir, cfg, gt_reference, scene_meta)
        self.view_idx = select_views(scene.n_views, cfg.views)
        self.manifest.data["view_count"] = len(self.view_idx)
        self.front_idx = self.view_idx[0]
        n = scene.n_views
        self.back_idx = n // 2 if n // 2 in self.view_idx and n > 1 else None

    # -- stage helpers ----------------------------------------------------------

    def _skip(self, name: str, config_hash: str) -> bool:
        rec = self.manifest.data["stages"].get(name)
        return (self.resume and rec is not None
                and rec.get("config_hash") == config_hash
                and self.manifest.stage_done(name))

    def _abs(self, rel: str) -> str:
        return os.path.join(self.out_dir, rel)

    def _clothed_map(self, view_index: int) -> ClothedNormalMap:
        if self.cfg.provider == ORACLE:
            maps = rasterize(self.scene.gt_clothed, self.scene.cameras[view_index], "front")
            return ClothedNormalMap.from_raster(maps, f"view_{view_index}")
        return self.scene.observations[view_index].clothed_normals

    def _observations(self):
        obs = []
        for i in self.view_idx:
            base = self.scene.observations[i]
            if self.cfg.provider == ORACLE:
                obs.append(ViewObservation(
                    base.camera, base.silhouette, self._clothed_map(i),
                    base.landmark_pixels, base.landmark_confidences, base.frame_id,
                ))
            else:
                obs.append(base)
        return obs

    # -- stages -----------------------------------------------------------------

    def run(self) -> RunManifest:
        init = self.stage_initialize()
        fit_params = self.stage_fit(init)
        priors = self.stage_body_priors(fit_params)
        normals = self.stage_clothed_normals(priors)
        depths = self.stage_integrate(priors, normals)
        surfaces = self.stage_lift(depths)
        avatar = self.stage_fuse(surfaces, priors)
        if self.cfg.evaluate:
            self.stage_evaluate(avatar)
        self.manifest.save()
        return self.manifest

    def stage_initialize(self) -> BodyParams:
        name = "initialize"
        h = _hash_config("init", self.view_idx, self.cfg.provider)
        with _Stage(self, name) as st:
            if self._skip(name, h):
                return BodyParams.load(self.manifest.output(name, "params"))
            init = average_params([self.scene.noisy_estimates[i] for i in self.view_idx])
            init.save(self._abs("init_params.json"))
            st.done({"params": "init_params.json"}, h, views_used=self.view_idx)
            return init

    def stage_fit(self, init: BodyParams) -> BodyParams:
        name = "fit_body"
        h = _hash_config("fit", self.view_idx, self.cfg.provider, self.cfg.fit.to_dict())
        with _Stage(self, name) as st:
            if self._skip(name, h):
                return BodyParams.load(self.manifest.output(name, "params"))
            result = optimize(self.model, self._observations(), init, self.cfg.fit)
            result.params.save(self._abs("body_params.json"))
            write_loss_trace(self._abs("loss_trace.csv"), result.loss_trace)
            self.manifest.data["fit_summary"] = {
                "iterations": result.iterations_run,
                "stop_reason": result.stop_reason,
                "initial_total": result.loss_trace[0].total,
                "final_total": result.loss_trace[-1].total,
            }
            st.done({"params": "body_params.json", "trace": "loss_trace.csv"}, h,
                    views_used=self.view_idx)
            return result.params

    def stage_body_priors(self, params: BodyParams) -> dict:
        name = "body_priors"
        h = _hash_config("priors", self.view_idx, params.to_dict())
        with _Stage(self, name) as st:
            if self._skip(name, h):
                data = np.load(self.manifest.output(name, "arrays"))
                body = load_ply(self.manifest.output(name, "body_mesh"))
                return {
                    "body": body,
                    "front": DepthField(data["front_depth"], data["front_mask"]),
                    "back": DepthField(data["back_depth"], data["back_mask"]),
                    "front_normals": data["front_normals"],
                    "back_normals": data["back_normals"],
                }
            cam = self.scene.cameras[self.front_idx]
            body = skin(self.model, params)
            front = rasterize(body, cam, "front")
            back = rasterize(body, cam, "back")
            save_ply(self._abs("body_prior.ply"), body)
            save_pfm(self._abs("prior_front_depth.pfm"), front.depth.astype(np.float32))
            save_pfm(self._abs("prior_back_depth.pfm"), back.depth.astype(np.float32))
            save_pgm_mask(self._abs("prior_mask.pgm"), front.mask)
            np.savez_compressed(
                self._abs("body_priors.npz"),
                front_depth=front.depth, front_mask=front.mask,
                back_depth=back.depth, back_mask=back.mask,
                front_normals=front.normal, back_normals=back.normal,
            )
            st.done(
                {
                    "arrays": "body_priors.npz",
                    "body_mesh": "body_prior.ply",
                    "front_depth": "prior_front_depth.pfm",
                    "back_depth": "prior_back_depth.pfm",
                    "mask": "prior_mask.pgm",
                },
                h,
                views_used=[self.front_idx],
            )
            return {
                "body": body,
                "front": front.depth_field(),
                "back": back.depth_field(),
                "front_normals": front.normal,
                "back_normals": back.normal,
            }

    def stage_clothed_normals(self, priors: dict) -> dict:
        name = "clothed_normals"
        h = _hash_config("normals", self.view_idx, self.cfg.provider,
                         self.back_idx, self.front_idx)
        with _Stage(self, name) as st:
            if self._skip(name, h):
                data = np.load(self.manifest.output(name, "arrays"))
                return {
                    "front": ClothedNormalMap(data["front_normals"], data["front_mask"],
                                              str(data["front_frame"])),
                    "back": ClothedNormalMap(data["back_normals"], data["back_mask"],
                                             str(data["back_frame"])),
                    "warp_stats": json.loads(str(data["warp_stats"])),
                }
            front_cam = self.scene.cameras[self.front_idx]
            front_frame = f"view_{self.front_idx}"
            front_map = self._clothed_map(self.front_idx)
            views_used = [self.front_idx]
            if self.back_idx is None:
                # single-view regime: no back observation exists; the smooth
                # body prior supplies the back layer
                back_map = ClothedNormalMap(
                    priors["back_normals"], priors["back"].mask.copy(), front_frame
                )
                warp_stats = {"mode": "prior_fallback", "warped": 0, "fallback": 0}
            else:
                back_map, warp_stats = transfer_back_normals(
                    self.scene, self.back_idx, self.front_idx,
                    priors["back"], priors["back_normals"],
                    self._clothed_map(self.back_idx),
                )
                views_used.append(self.back_idx)
            save_normal_map(self._abs("clothed_front"), front_map)
            save_normal_map(self._abs("clothed_back"), back_map)
            with open(self._abs("normals_manifest.json"), "w") as fh:
                json.dump({"front": {"frame": front_map.frame},
                           "back": {"frame": back_map.frame},
                           "warp": warp_stats}, fh, indent=1)
            np.savez_compressed(
                self._abs("clothed_normals.npz"),
                front_normals=front_map.normal, front_mask=front_map.mask,
                front_frame=front_map.frame,
                back_normals=back_map.normal, back_mask=back_map.mask,
                back_frame=back_map.frame, warp_stats=json.dumps(warp_stats),
            )
            st.done(
                {
                    "arrays": "clothed_normals.npz",
                    "front": "clothed_front_normals.pfm",
                    "back": "clothed_back_normals.pfm",
                    "frames": "normals_manifest.json",
                },
                h,
                views_used=views_used,
            )
            return {"front": front_map, "back": back_map, "warp_stats": warp_stats}

    def stage_integrate(self, priors: dict, normals: dict) -> dict:
        name = "integrate"
        icfg_dict = self.cfg.integration.to_dict()
        h = _hash_config("integrate", icfg_dict)
        with _Stage(self, name) as st:
            if self._skip(name, h):
                data = np.load(self.manifest.output(name, "arrays"))
                return {
                    "front": DepthField(data["front_depth"], data["front_mask"]),
                    "back": DepthField(data["back_depth"], data["back_mask"]),
                }
            cam = self.scene.cameras[self.front_idx]
            icfg = IntegrationConfig.from_dict(icfg_dict)
            if icfg.projection == "orthographic" and icfg.pixel_scale_m == 1.0:
                masked = priors["front"].depth[priors["front"].mask]
                icfg.pixel_scale_m = float(np.median(masked)) / cam.fx
            problem = IntegrationProblem(
                normals_front=normals["front"], normals_back=normals["back"],
                prior_front=priors["front"], prior_back=priors["back"], camera=cam,
            )
            zf, zb, report = integrate(problem, icfg)
            report["pixel_scale_m"] = icfg.pixel_scale_m
            save_pfm(self._abs("depth_front.pfm"), zf.depth.astype(np.float32))
            save_pfm(self._abs("depth_back.pfm"), zb.depth.astype(np.float32))
            save_pgm_mask(self._abs("depth_front_mask.pgm"), zf.mask)
            save_pgm_mask(self._abs("depth_back_mask.pgm"), zb.mask)
            save_report(self._abs("integration_report.json"), report)
            np.savez_compressed(
                self._abs("integrated_depth.npz"),
                front_depth=zf.depth, front_mask=zf.mask,
                back_depth=zb.depth, back_mask=zb.mask,
            )
            st.done(
                {
                    "arrays": "integrated_depth.npz",
                    "front": "depth_front.pfm",
                    "back": "depth_back.pfm",
                    "report": "integration_report.json",
                },
                h,
            )
            return {"front": zf, "back": zb}

    def stage_lift(self, depths: dict) -> dict:
        name = "lift_surfaces"
        h = _hash_config("lift")
        with _Stage(self, name) as st:
            if self._skip(name, h):
                return {
                    "front": load_ply(self.manifest.output(name, "front")),
                    "back": load_ply(self.manifest.output(name, "back")),
                }
            from .raster import depth_to_mesh

            cam = self.scene.cameras[self.front_idx]
            front_mesh = depth_to_mesh(depths["front"], cam)
            back_mesh = depth_to_mesh(depths["back"], cam).flipped()
            save_ply(self._abs("surface_front.ply"), front_mesh)
            save_ply(self._abs("surface_back.ply"), back_mesh)
            st.done({"front": "surface_front.ply", "back": "surface_back.ply"}, h)
            return {"front": front_mesh, "back": back_mesh}

    def stage_fuse(self, surfaces: dict, priors: dict) -> TriMesh:
        name = "fuse"
        h = _hash_config("fuse", self.cfg.fusion.to_dict())
        with _Stage(self, name) as st:
            if self._skip(name, h):
                return load_ply(self.manifest.output(name, "mesh_ply"))
            cloud = assemble_cloud(surfaces["front"], surfaces["back"], priors["body"],
                                   self.cfg.fusion)
            avatar, diagnostics = fuse(cloud, self.cfg.fusion)
            save_ply(self._abs("avatar.ply"), avatar)
            save_obj(self._abs("avatar.obj"), avatar)
            save_diagnostics(self._abs("fusion_diagnostics.json"), diagnostics)
            st.done(
                {
                    "mesh_ply": "avatar.ply",
                    "mesh_obj": "avatar.obj",
                    "diagnostics": "fusion_diagnostics.json",
                },
                h,
            )
            return avatar

    def stage_evaluate(self, avatar: TriMesh) -> MetricReport:
        name = "evaluate"
        h = _hash_config("evaluate", self.cfg.metrics.to_dict())
        with _Stage(self, name) as st:
            if self._skip(name, h):
                return MetricReport.load(self.manifest.output(name, "report"))
            mcfg = MetricConfig.from_dict(self.cfg.metrics.to_dict())
            mcfg.seed = self.cfg.seed
            report = evaluate_pair(avatar, self.scene.gt_clothed, mcfg)
            report.save(self._abs("metrics.json"))
            label = self.cfg.label or f"{len(self.view_idx)}-view"
            with open(self._abs("metrics.txt"), "w") as fh:
                fh.write(report_table([(label, report)]) + "\n")
            from .metrics import write_report_csv

            write_report_csv(self._abs("metrics.csv"), [(label, report)])
            st.done(
                {"report": "metrics.json", "table": "metrics.txt", "csv": "metrics.csv"},
                h,
            )
            return report


def transfer_back_normals(scene: SyntheticScene, back_idx: int, front_idx: int,
                          prior_back: DepthField, prior_back_normals: np.ndarray,
                          back_view_map: ClothedNormalMap):
    """Back-view clothed normals, re-expressed in the front frame and warped
    onto the front pixel grid through the body prior's back depth.

    Front-grid pixels whose prior point is not depth-consistently visible in
    the back view fall back to the prior's own back-layer normals.
    """
    front_cam = scene.cameras[front_idx]
    back_cam = scene.cameras[back_idx]
    rot = relative_rotation(back_cam, front_cam)
    rotated = np.zeros_like(back_view_map.normal)
    rotated[back_view_map.mask] = back_view_map.normal[back_view_map.mask] @ rot.matrix.T

    # depth consistency is checked against the back view's own observed depth
    obs_depth = scene.view_depths[back_idx].depth if scene.view_depths else None
    obs_mask = back_view_map.mask

    mask = prior_back.mask
    vs, us = np.nonzero(mask)
    world = unproject_grid(us.astype(float), vs.astype(float), prior_back.depth[vs, us],
                           front_cam)
    px, z, valid = project_many(world, back_cam)
    pxi = np.round(px).astype(int)
    in_frame = (
        valid
        & (pxi[:, 0] >= 0) & (pxi[:, 0] < back_cam.width)
        & (pxi[:, 1] >= 0) & (pxi[:, 1] < back_cam.height)
    )
    ok = in_frame.copy()
    sample_v = np.where(in_frame, pxi[:, 1], 0)
    sample_u = np.where(in_frame, pxi[:, 0], 0)
    ok &= obs_mask[sample_v, sample_u]
    if obs_depth is not None:
        # occlusion gate: reject samples whose back-view depth disagrees with
        # the prior point. The tolerance adapts to the prior's own systematic
        # depth error so an imperfect fit does not starve the transfer.
        depth_at = obs_depth[sample_v, sample_u]
        residual = np.abs(z - depth_at)
        med = float(np.median(residual[ok])) if ok.any() else 0.0
        gate = np.maximum(0.03 * depth_at, 3.0 * med)
        ok &= residual <= gate

    normal = np.zeros((mask.shape[0], mask.shape[1], 3))
    out_mask = np.zeros_like(mask)
    warped_n = rotated[sample_v[ok], sample_u[ok]]
    normal[vs[ok], us[ok]] = warped_n
    out_mask[vs[ok], us[ok]] = True
    # fallback: prior back-layer normals where the warp failed
    fb = ~ok
    normal[vs[fb], us[fb]] = prior_back_normals[vs[fb], us[fb]]
    out_mask[vs[fb], us[fb]] = True
    stats = {"mode": "back_view_transfer", "warped": int(ok.sum()),
             "fallback": int(fb.sum())}
    return ClothedNormalMap(normal, out_mask, f"view_{front_idx}"), stats


def run_pipeline(scene, cfg: PipelineConfig, out_dir, model: BodyModel | None = None,
                 resume: bool = False, gt_reference: str = "") -> RunManifest:
    """Execute the full pipeline for one scene (a SyntheticScene or a scene
    directory path). Returns the saved RunManifest."""
    if isinstance(scene, (str, os.PathLike)):
        gt_reference = gt_reference or str(scene)
        scene = load_scene(scene)
    runner = PipelineRunner(scene, cfg, out_dir, gt_reference or "in-memory-scene",
                            model=model, resume=resume)
    return runner.run()


def compare_runs(manifest_dirs, aggregate: bool = False) -> str:
    """Aligned metric table over runs, ordered as given, with view-count
    hierarchy flags. With aggregate=True, runs sharing a label are averaged."""
    manifests = [RunManifest.load(d) for d in manifest_dirs]
    if len(manifests) < 2:
        raise ComparisonError("need at least two runs to compare")
    gt_refs = {m.data["gt_reference"] for m in manifests}
    if not aggregate and len(gt_refs) != 1:
        raise ComparisonError(f"runs reference different ground truths: {sorted(gt_refs)}")
    entries = []
    for m in manifests:
        if "evaluate" not in m.data["stages"]:
            raise ComparisonError(f"{m.out_dir}: run has no evaluation stage")
        report = MetricReport.load(m.output("evaluate", "report"))
        label = m.data.get("label") or f"{m.data['view_count']}-view"
        entries.append((label, int(m.data["view_count"]), report))

    if aggregate:
        grouped = {}
        order = []
        for label, views, report in entries:
            if label not in grouped:
                grouped[label] = (views, [])
                order.append(label)
            grouped[label][1].append(report)
        entries = [(label, grouped[label][0], aggregate_reports(grouped[label][1]))
                   for label in order]

    flags = []
    for label, views, report in entries:
        violated = any(
            other_views < views and other_rep.chamfer_mm < report.chamfer_mm
            for _, other_views, other_rep in entries
        )
        flags.append(" [hierarchy violated]" if violated else "")
    rows = [(f"{label} ({views} views){flag}", report)
            for (label, views, report), flag in zip(entries, flags)]
    return report_table(rows)
