import numpy as np
import pytest

from mvavatar.mesh import TriMesh, sample_surface
from mvavatar.metrics import (
    MetricConfig,
    MetricReport,
    aggregate_reports,
    chamfer,
    evaluate_pair,
    normal_consistency,
    p2s_accuracy,
    p2s_completeness,
    report_table,
    write_report_csv,
)
from mvavatar.rotations import axis_angle_to_matrix

from helpers import brute_force_closest, icosphere, random_triangle_soup


def plate(z=0.0, half=0.5, flip=False):
    verts = [[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]]
    tris = [[0, 1, 2], [0, 2, 3]]
    mesh = TriMesh(verts, tris)
    return mesh.flipped() if flip else mesh


class TestDirectional:
    def test_identity_zero(self):
        sphere = icosphere(1.0, (0, 0, 0), 2)
        assert p2s_accuracy(sphere, sphere, 2000, seed=0) < 1e-9
        assert p2s_completeness(sphere, sphere, 2000, seed=0) < 1e-9

    def test_offset_plates(self):
        rec = plate(z=0.010)
        gt = plate(z=0.0)
        assert p2s_accuracy(rec, gt, 5000, seed=1) == pytest.approx(10.0, abs=0.1)
        assert chamfer(rec, gt, 5000, seed=1) == pytest.approx(10.0, abs=0.1)

    def test_half_coverage_completeness(self):
        gt_verts = np.concatenate([plate(0.0).vertices, plate(0.010).vertices])
        gt_tris = np.concatenate([plate(0.0).triangles, plate(0.010).triangles + 4])
        gt = TriMesh(gt_verts, gt_tris)
        rec = plate(0.0)
        comp = p2s_completeness(rec, gt, 40000, seed=2)
        assert comp == pytest.approx(5.0, abs=0.15)

    def test_completeness_is_swapped_accuracy(self):
        rng = np.random.default_rng(3)
        a = random_triangle_soup(rng, 40)
        b = random_triangle_soup(rng, 30)
        assert p2s_completeness(a, b, 3000, seed=7) == p2s_accuracy(b, a, 3000, seed=7)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(4)
        for _ in range(6):
            rec = random_triangle_soup(rng, int(rng.integers(10, 60)))
            gt = random_triangle_soup(rng, int(rng.integers(10, 60)))
            n = 300
            value = p2s_accuracy(rec, gt, n, seed=11)
            samples = sample_surface(rec, n, 11)
            dists = [brute_force_closest(gt, p)[1] for p in samples.positions]
            expected = float(np.mean(dists) * 1000.0)
            assert value == pytest.approx(expected, rel=1e-9)


class TestChamfer:
    def test_identical_zero(self):
        soup = random_triangle_soup(np.random.default_rng(5), 30)
        assert chamfer(soup, soup, 2000, seed=0) < 1e-9

    def test_symmetry(self):
        rng = np.random.default_rng(6)
        a = random_triangle_soup(rng, 25)
        b = random_triangle_soup(rng, 35)
        assert chamfer(a, b, 2500, seed=9) == pytest.approx(
            chamfer(b, a, 2500, seed=9), rel=1e-12
        )

    def test_is_mean_of_directions(self):
        rng = np.random.default_rng(7)
        a = random_triangle_soup(rng, 20)
        b = random_triangle_soup(rng, 20)
        acc = p2s_accuracy(a, b, 1000, seed=3)
        comp = p2s_completeness(a, b, 1000, seed=3)
        assert chamfer(a, b, 1000, seed=3) == pytest.approx((acc + comp) / 2, abs=1e-12)


class TestNormalConsistency:
    def test_identical_zero(self):
        # arccos near 1 resolves angles only to ~sqrt(eps)
        sphere = icosphere(1.0, (0, 0, 0), 2)
        assert normal_consistency(sphere, sphere, 2000, seed=0) < 1e-5

    def test_flipped_plane_180(self):
        assert normal_consistency(plate(), plate(flip=True), 2000, seed=1) == pytest.approx(
            180.0, abs=1e-9
        )

    def test_concentric_spheres_aligned_normals(self):
        inner = icosphere(1.0, (0, 0, 0), 4)
        outer = icosphere(1.2, (0, 0, 0), 4)
        angle = normal_consistency(inner, outer, 20000, seed=2)
        dist = chamfer(inner, outer, 20000, seed=2)
        assert angle < 3.0      # radially aligned normals
        assert dist == pytest.approx(200.0, abs=5.0)  # but 200 mm apart

    def test_range(self):
        rng = np.random.default_rng(8)
        a = random_triangle_soup(rng, 15)
        b = random_triangle_soup(rng, 15)
        val = normal_consistency(a, b, 500, seed=0)
        assert 0.0 <= val <= 180.0


class TestEvaluatePair:
    def test_identity_report(self):
        sphere = icosphere(0.5, (0, 0, 0), 2)
        rep = evaluate_pair(sphere, sphere, MetricConfig(sample_count=2000, seed=5))
        assert rep.chamfer_mm < 1e-9
        assert rep.normal_consistency_deg < 1e-5

    def test_composition_equals_individual_ops(self):
        rng = np.random.default_rng(9)
        rec = random_triangle_soup(rng, 30)
        gt = random_triangle_soup(rng, 25)
        cfg = MetricConfig(sample_count=1500, seed=21)
        rep = evaluate_pair(rec, gt, cfg)
        assert rep.p2s_accuracy_mm == p2s_accuracy(rec, gt, 1500, 21)
        assert rep.p2s_completeness_mm == p2s_completeness(rec, gt, 1500, 21)
        assert rep.normal_consistency_deg == normal_consistency(rec, gt, 1500, 21)
        assert rep.chamfer_mm == pytest.approx(
            (rep.p2s_accuracy_mm + rep.p2s_completeness_mm) / 2, abs=1e-12
        )

    def test_rigid_invariance(self):
        # decorrelated tessellations: parallel triangulations would park many
        # samples on closest-triangle tie boundaries, where fp noise flips the
        # flat normal
        rec = icosphere(0.8, (0.2, 0.1, 0.0), 3)
        pre = axis_angle_to_matrix(np.array([0.9, 0.2, -0.4]))
        gt = icosphere(0.85, (0.0, 0.0, 0.0), 3).transformed(pre, [0.15, 0.12, 0.05])
        cfg = MetricConfig(sample_count=20000, seed=13)
        base = evaluate_pair(rec, gt, cfg)
        rot = axis_angle_to_matrix(np.array([0.4, -0.8, 0.3]))
        t = np.array([1.0, -2.0, 0.5])
        moved = evaluate_pair(rec.transformed(rot, t), gt.transformed(rot, t), cfg)
        for a, b in zip(base.values(), moved.values()):
            assert b == pytest.approx(a, rel=1e-6, abs=1e-9)

    def test_convergence_in_sample_count(self):
        rec = icosphere(1.0, (0.05, 0.0, 0.0), 3)
        gt = icosphere(1.0, (0.0, 0.0, 0.0), 3)
        v1 = chamfer(rec, gt, 100_000, seed=3)
        v2 = chamfer(rec, gt, 400_000, seed=3)
        assert abs(v1 - v2) / v2 < 0.01

    def test_aggregation_is_mean(self):
        rng = np.random.default_rng(11)
        reports = []
        for _ in range(4):
            a = random_triangle_soup(rng, 15)
            b = random_triangle_soup(rng, 15)
            reports.append(evaluate_pair(a, b, MetricConfig(sample_count=500, seed=1)))
        agg = aggregate_reports(reports)
        assert agg.chamfer_mm == pytest.approx(
            np.mean([r.chamfer_mm for r in reports]), abs=1e-12
        )

    def test_report_roundtrip_and_table(self, tmp_path):
        rep = MetricReport(12.5, 11.0, 14.0, 33.3, 1000, 7)
        path = tmp_path / "rep.json"
        rep.save(path)
        back = MetricReport.load(path)
        assert back == rep
        table = report_table([("run_a", rep), ("run_b", back)])
        assert "Chamfer (mm)" in table and "run_a" in table
        write_report_csv(tmp_path / "rep.csv", [("run_a", rep)])
        assert (tmp_path / "rep.csv").read_text().count("\n") == 2
