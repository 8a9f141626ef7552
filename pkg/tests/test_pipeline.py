import json
import os

import numpy as np
import pytest

from mvavatar.exceptions import ComparisonError
from mvavatar.fitting import FitConfig
from mvavatar.fusion import FuseConfig
from mvavatar.humanoid import default_model
from mvavatar.metrics import MetricConfig
from mvavatar.pipeline import PipelineConfig, RunManifest, compare_runs, run_pipeline, select_views
from mvavatar.synth import make_scene, save_scene


@pytest.fixture(scope="module")
def model():
    return default_model()


@pytest.fixture(scope="module")
def scene():
    return make_scene(subject_seed=81, noise_seed=83, amplitude_m=0.02,
                      pose="rest", n_views=4, resolution=128)


def quick_config(**kwargs):
    defaults = dict(
        views="all",
        seed=5,
        fit=FitConfig(max_iterations=4),
        fusion=FuseConfig(grid_resolution=64, filler_exclusion_radius_m=0.015),
        metrics=MetricConfig(sample_count=5000),
    )
    defaults.update(kwargs)
    return PipelineConfig(**defaults)


class TestSelectViews:
    def test_modes(self):
        assert select_views(8, 1) == [0]
        assert select_views(8, 2) == [0, 4]
        assert select_views(8, "all") == list(range(8))
        assert select_views(8, [1, 3, 5]) == [1, 3, 5]

    def test_invalid(self):
        with pytest.raises(ValueError):
            select_views(8, 3)
        with pytest.raises(ValueError):
            select_views(8, [9])
        with pytest.raises(ValueError):
            select_views(8, [])


class TestRunPipeline:
    def test_happy_path_manifest(self, scene, model, tmp_path):
        manifest = run_pipeline(scene, quick_config(label="4v"), tmp_path / "run",
                                model=model, gt_reference="scene81")
        for stage in ("initialize", "fit_body", "body_priors", "clothed_normals",
                      "integrate", "lift_surfaces", "fuse", "evaluate"):
            assert stage in manifest.data["stages"], stage
            assert manifest.stage_done(stage)
        report = json.load(open(manifest.output("evaluate", "report")))
        assert report["chamfer_mm"] > 0
        from mvavatar.fusion import is_closed
        from mvavatar.mesh_io import load_ply

        avatar = load_ply(manifest.output("fuse", "mesh_ply"))
        assert is_closed(avatar)

    def test_single_view_back_fallback(self, scene, model, tmp_path):
        manifest = run_pipeline(scene, quick_config(views=1), tmp_path / "run1",
                                model=model, gt_reference="scene81")
        frames = json.load(open(manifest.output("clothed_normals", "frames")))
        assert frames["warp"]["mode"] == "prior_fallback"
        assert manifest.data["view_count"] == 1

    def test_two_view_access_audit(self, scene, model, tmp_path):
        manifest = run_pipeline(scene, quick_config(views=2), tmp_path / "run2",
                                model=model, gt_reference="scene81")
        used = set()
        for views in manifest.data["views_used"].values():
            used.update(views)
        assert used == {0, 2}  # front and back of the 4-camera rig
        frames = json.load(open(manifest.output("clothed_normals", "frames")))
        assert frames["warp"]["mode"] == "back_view_transfer"
        assert frames["warp"]["warped"] > 0

    def test_determinism(self, scene, model, tmp_path):
        cfg = quick_config(label="det")
        m1 = run_pipeline(scene, cfg, tmp_path / "a", model=model, gt_reference="s")
        m2 = run_pipeline(scene, cfg, tmp_path / "b", model=model, gt_reference="s")
        for key_stage, key in (("fuse", "mesh_ply"), ("fit_body", "trace"),
                               ("evaluate", "report")):
            b1 = open(m1.output(key_stage, key), "rb").read()
            b2 = open(m2.output(key_stage, key), "rb").read()
            assert b1 == b2, f"{key_stage}/{key} differs"

    def test_resume_skips_fit_and_reproduces_mesh(self, scene, model, tmp_path):
        cfg = quick_config()
        out = tmp_path / "resumable"
        m1 = run_pipeline(scene, cfg, out, model=model, gt_reference="s")
        avatar_bytes = open(m1.output("fuse", "mesh_ply"), "rb").read()
        fit_elapsed = m1.data["stages"]["fit_body"]["elapsed_s"]
        trace_mtime = os.path.getmtime(m1.output("fit_body", "trace"))

        # interrupt after integration: downstream outputs disappear
        for stage in ("lift_surfaces", "fuse", "evaluate"):
            for rel in m1.data["stages"][stage]["outputs"].values():
                os.remove(os.path.join(m1.out_dir, rel))

        m2 = run_pipeline(scene, cfg, out, model=model, gt_reference="s", resume=True)
        assert open(m2.output("fuse", "mesh_ply"), "rb").read() == avatar_bytes
        assert m2.data["stages"]["fit_body"]["elapsed_s"] == fit_elapsed
        assert os.path.getmtime(m2.output("fit_body", "trace")) == trace_mtime

    def test_scene_directory_input(self, scene, model, tmp_path):
        scene_dir = tmp_path / "scene"
        save_scene(scene, scene_dir)
        manifest = run_pipeline(str(scene_dir), quick_config(views=2), tmp_path / "rdir",
                                model=model)
        assert manifest.data["gt_reference"] == str(scene_dir)
        assert manifest.stage_done("fuse")


class TestCompareRuns:
    @pytest.fixture(scope="class")
    def three_runs(self, scene, model, tmp_path_factory):
        root = tmp_path_factory.mktemp("cmp")
        dirs = []
        for views, label in ((1, "one"), (2, "two"), ("all", "four")):
            out = root / label
            run_pipeline(scene, quick_config(views=views, label=label), out,
                         model=model, gt_reference="scene81")
            dirs.append(str(out))
        return dirs

    def test_table_rows_in_order(self, three_runs):
        table = compare_runs(three_runs)
        lines = [l for l in table.splitlines() if l.strip()]
        assert len(lines) == 4  # header + 3 rows
        assert "one" in lines[1] and "two" in lines[2] and "four" in lines[3]
        assert "Chamfer (mm)" in lines[0]

    def test_identical_runs_identical_rows(self, scene, model, tmp_path, three_runs):
        table = compare_runs([three_runs[0], three_runs[0]])
        lines = [l for l in table.splitlines() if l.strip()]
        assert lines[1] == lines[2]

    def test_aggregate_mode(self, three_runs):
        table = compare_runs(three_runs + three_runs, aggregate=True)
        lines = [l for l in table.splitlines() if l.strip()]
        assert len(lines) == 4  # labels deduplicated by averaging

    def test_mismatched_gt_error(self, scene, model, tmp_path, three_runs):
        other = tmp_path / "other_gt"
        run_pipeline(scene, quick_config(views=1), other, model=model,
                     gt_reference="different")
        with pytest.raises(ComparisonError):
            compare_runs([three_runs[0], str(other)])

    def test_hierarchy_flags(self, three_runs):
        table = compare_runs(three_runs)
        # the flag column exists; whether it fires depends on the metric values
        assert "views)" in table


class TestManifest:
    def test_missing_file_rejected(self, scene, model, tmp_path):
        manifest = run_pipeline(scene, quick_config(views=1), tmp_path / "m",
                                model=model, gt_reference="s")
        os.remove(manifest.output("fuse", "mesh_obj"))
        with pytest.raises(FileNotFoundError):
            manifest.save()

    def test_config_roundtrip(self):
        cfg = quick_config(views=2, label="x")
        back = PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert back.to_dict() == cfg.to_dict()
