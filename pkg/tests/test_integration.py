import numpy as np
import pytest

from mvavatar.camera import Camera
from mvavatar.exceptions import EmptySurfaceError, UnanchoredGaugeError
from mvavatar.integration import (
    IntegrationConfig,
    IntegrationProblem,
    harmonize_masks,
    integrate,
)
from mvavatar.normal_maps import ClothedNormalMap
from mvavatar.raster import DepthField


def flat_cam(w, h, fx=100.0):
    return Camera(fx, fx, (w - 1) / 2.0, (h - 1) / 2.0, w, h, np.eye(3), np.zeros(3))


def unit_map(n, vec, mask=None, frame="grid"):
    mask = np.ones((n, n), bool) if mask is None else mask
    arr = np.zeros((n, n, 3))
    arr[mask] = np.asarray(vec, dtype=float) / np.linalg.norm(vec)
    return ClothedNormalMap(arr, mask, frame)


def make_problem(n, nf, nb, prior_f, prior_b):
    return IntegrationProblem(nf, nb, prior_f, prior_b, flat_cam(n, n))


def sphere_cap_fixture(n=128, radius=1.0, center_depth=2.0, rim=0.95):
    """Analytic sphere-cap normals and depths on an orthographic pixel grid."""
    scale = 2.0 * radius / n
    c = (n - 1) / 2.0
    us, vs = np.meshgrid(np.arange(n, dtype=float), np.arange(n, dtype=float))
    x = (us - c) * scale
    y = (vs - c) * scale
    rho2 = x**2 + y**2
    mask = rho2 < (rim * radius) ** 2
    z = np.zeros((n, n))
    z[mask] = center_depth - np.sqrt(radius**2 - rho2[mask])
    normal = np.zeros((n, n, 3))
    normal[mask, 0] = x[mask] / radius
    normal[mask, 1] = y[mask] / radius
    normal[mask, 2] = (z[mask] - center_depth) / radius
    return mask, z, normal, scale


class TestHarmonize:
    def test_identical_masks_ring(self):
        n = 16
        mask = np.zeros((n, n), bool)
        mask[4:12, 4:12] = True
        prob = make_problem(
            n, unit_map(n, [0, 0, -1], mask), unit_map(n, [0, 0, 1], mask),
            DepthField(np.where(mask, 2.0, 0.0), mask),
            DepthField(np.where(mask, 2.5, 0.0), mask),
        )
        out = harmonize_masks(prob)
        ring = out.boundary_ring
        interior = np.zeros_like(mask)
        interior[5:11, 5:11] = True
        assert np.array_equal(ring, mask & ~interior)
        assert np.array_equal(out.prior_front.mask, mask)

    def test_subset_masks_use_intersection(self):
        n = 16
        big = np.zeros((n, n), bool)
        big[2:14, 2:14] = True
        small = np.zeros((n, n), bool)
        small[5:11, 5:11] = True
        prob = make_problem(
            n, unit_map(n, [0, 0, -1], small), unit_map(n, [0, 0, 1], big),
            DepthField(np.where(big, 2.0, 0.0), big),
            DepthField(np.where(big, 2.5, 0.0), big),
        )
        out = harmonize_masks(prob)
        # coupling ring lives on the intersection (= small) boundary
        assert out.boundary_ring.sum() == small.sum() - 16  # 6x6 minus 4x4 interior
        assert np.array_equal(out.prior_front.mask, small)
        assert np.array_equal(out.prior_back.mask, big)

    def test_disjoint_masks_error(self):
        n = 16
        a = np.zeros((n, n), bool)
        a[2:6, 2:6] = True
        b = np.zeros((n, n), bool)
        b[10:14, 10:14] = True
        prob = make_problem(
            n, unit_map(n, [0, 0, -1], a), unit_map(n, [0, 0, 1], b),
            DepthField(np.where(a, 2.0, 0.0), a), DepthField(np.where(b, 2.5, 0.0), b),
        )
        with pytest.raises(EmptySurfaceError):
            harmonize_masks(prob)


class TestIntegrateAnalytic:
    def test_fronto_parallel_plane_exact(self):
        n = 32
        mask = np.ones((n, n), bool)
        prior = DepthField(np.full((n, n), 2.0), mask)
        prob = make_problem(n, unit_map(n, [0, 0, -1]), unit_map(n, [0, 0, 1]),
                            prior, DepthField(np.full((n, n), 2.0), mask))
        zf, zb, report = integrate(prob, IntegrationConfig(solver_tolerance=1e-12))
        assert np.max(np.abs(zf.depth[mask] - 2.0)) < 1e-10
        assert np.max(np.abs(zb.depth[mask] - 2.0)) < 1e-10
        assert report["rms_normal_residual"] < 1e-10

    def test_tilted_plane_single_anchor(self):
        n = 64
        mask = np.ones((n, n), bool)
        slope = 0.5
        z_true = 2.0 + slope * np.arange(n, dtype=float)[None, :].repeat(n, axis=0)
        anchor = np.zeros((n, n), bool)
        anchor[n // 2, n // 2] = True
        prior = DepthField(np.where(anchor, z_true, 1.0), anchor)
        prob = make_problem(
            n, unit_map(n, [slope, 0.0, -1.0]), unit_map(n, [0, 0, 1]),
            prior, DepthField(np.full((n, n), 9.0), anchor),
        )
        cfg = IntegrationConfig(solver_tolerance=1e-12, coupling_weight=0.0)
        zf, _, _ = integrate(prob, cfg)
        assert np.max(np.abs(zf.depth[mask] - z_true[mask])) < 1e-8

    def test_sphere_cap_rmse(self):
        mask, z_true, normal, scale = sphere_cap_fixture(n=128, radius=1.0)
        n = 128
        anchor = np.zeros((n, n), bool)
        anchor[n // 2, n // 2] = True
        prior = DepthField(np.where(anchor, z_true, 1.0), anchor)
        back_n = np.zeros((n, n, 3))
        back_n[mask] = [0.0, 0.0, 1.0]
        prob = make_problem(
            n, ClothedNormalMap(normal, mask, "grid"), ClothedNormalMap(back_n, mask, "grid"),
            prior, DepthField(np.where(anchor, 3.0, 0.0), anchor),
        )
        cfg = IntegrationConfig(pixel_scale_m=scale, coupling_weight=0.0,
                                solver_tolerance=1e-10)
        zf, _, report = integrate(prob, cfg)
        rmse = np.sqrt(np.mean((zf.depth[mask] - z_true[mask]) ** 2))
        assert rmse < 0.01
        trace = report["objective_trace"]
        assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))


class TestIntegrateProperties:
    def test_objective_nonincreasing_on_noisy_field(self):
        rng = np.random.default_rng(0)
        n = 48
        mask = np.ones((n, n), bool)
        vecs = np.array([0.02, 0.0, -1.0]) + rng.normal(0, 0.04, (n, n, 3))
        vecs /= np.linalg.norm(vecs, axis=2, keepdims=True)
        vecs[..., 2] = -np.abs(vecs[..., 2])
        prior = DepthField(np.full((n, n), 2.0), mask)
        prob = make_problem(n, ClothedNormalMap(vecs, mask, "grid"),
                            unit_map(n, [0, 0, 1]), prior,
                            DepthField(np.full((n, n), 2.3), mask))
        _, _, report = integrate(prob, IntegrationConfig(outer_iterations=6))
        trace = report["objective_trace"]
        assert len(trace) >= 1
        assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))

    def test_gauge_shift_equivariance(self):
        n = 32
        mask = np.ones((n, n), bool)
        slope = 0.02
        nf = unit_map(n, [slope, 0.0, -1.0])
        nb = unit_map(n, [0.0, 0.0, 1.0])
        prior_f = DepthField(np.full((n, n), 2.0), mask)
        prior_b = DepthField(np.full((n, n), 2.5), mask)
        cfg = IntegrationConfig(solver_tolerance=1e-12)
        zf1, zb1, _ = integrate(make_problem(n, nf, nb, prior_f, prior_b), cfg)
        shift = 0.7
        zf2, zb2, _ = integrate(
            make_problem(
                n, nf, nb,
                DepthField(prior_f.depth + shift, mask),
                DepthField(prior_b.depth + shift, mask),
            ),
            cfg,
        )
        assert np.max(np.abs(zf2.depth[mask] - zf1.depth[mask] - shift)) < 1e-8
        assert np.max(np.abs(zb2.depth[mask] - zb1.depth[mask] - shift)) < 1e-8

    def test_coupling_monotonically_closes_boundary_gap(self):
        mask, z_true, normal, scale = sphere_cap_fixture(n=64, radius=1.0)
        n = 64
        prior_f = DepthField(np.where(mask, z_true, 0.0), mask)
        back_depth = np.where(mask, 4.0 - z_true, 0.0)  # mirrored back shell
        back_normal = normal.copy()
        back_normal[mask, 2] *= -1.0
        prior_b = DepthField(back_depth, mask)
        gaps = []
        for couple in (0.0, 1e-3, 1e-1):
            cfg = IntegrationConfig(pixel_scale_m=scale, coupling_weight=couple,
                                    prior_weight=1e-4, solver_tolerance=1e-10)
            _, _, report = integrate(
                make_problem(n, ClothedNormalMap(normal, mask, "g"),
                             ClothedNormalMap(back_normal, mask, "g"),
                             prior_f, prior_b),
                cfg,
            )
            gaps.append(report["boundary_gap_max"])
        assert gaps[1] <= gaps[0] + 1e-9
        assert gaps[2] <= gaps[1] + 1e-9
        assert gaps[2] < gaps[0]

    def test_grazing_normals_demoted(self):
        n = 24
        mask = np.ones((n, n), bool)
        vecs = np.zeros((n, n, 3))
        vecs[..., 2] = -1.0
        vecs[5, 5] = [1.0, 0.0, -1e-4]  # nearly in-plane: slope formula unusable
        vecs[5, 5] /= np.linalg.norm(vecs[5, 5])
        prior = DepthField(np.full((n, n), 2.0), mask)
        prob = make_problem(n, ClothedNormalMap(vecs, mask, "g"),
                            unit_map(n, [0, 0, 1]), prior,
                            DepthField(np.full((n, n), 2.0), mask))
        zf, _, report = integrate(prob, IntegrationConfig(solver_tolerance=1e-12))
        assert report["demoted_pixels"]["front"] == 1
        assert abs(zf.depth[5, 5] - 2.0) < 1e-8

    def test_unanchored_gauge_error(self):
        n = 16
        mask = np.ones((n, n), bool)
        empty = np.zeros((n, n), bool)
        prob = make_problem(n, unit_map(n, [0, 0, -1]), unit_map(n, [0, 0, 1]),
                            DepthField(np.zeros((n, n)), empty),
                            DepthField(np.zeros((n, n)), empty))
        with pytest.raises(UnanchoredGaugeError):
            integrate(prob, IntegrationConfig(coupling_weight=0.0))

    def test_output_fields_valid(self):
        mask, z_true, normal, scale = sphere_cap_fixture(n=48)
        n = 48
        prior = DepthField(np.where(mask, z_true, 0.0), mask)
        back_n = np.zeros((n, n, 3))
        back_n[mask] = [0, 0, 1]
        zf, zb, _ = integrate(
            make_problem(n, ClothedNormalMap(normal, mask, "g"),
                         ClothedNormalMap(back_n, mask, "g"), prior,
                         DepthField(np.where(mask, 3.0, 0.0), mask)),
            IntegrationConfig(pixel_scale_m=scale),
        )
        assert np.all(np.isfinite(zf.depth[zf.mask]))
        assert np.all(zf.depth[zf.mask] > 0)
        assert np.array_equal(zf.mask, mask)


class TestPerspective:
    def test_plane_roundtrip(self):
        """Perspective slopes of a fronto-parallel plane integrate back to it."""
        n = 48
        cam = flat_cam(n, n, fx=60.0)
        mask = np.ones((n, n), bool)
        nf = unit_map(n, [0, 0, -1])
        nb = unit_map(n, [0, 0, 1])
        prior = DepthField(np.full((n, n), 2.0), mask)
        cfg = IntegrationConfig(projection="perspective", solver_tolerance=1e-12,
                                coupling_weight=0.0)
        prob = IntegrationProblem(nf, nb, prior, DepthField(np.full((n, n), 2.0), mask), cam)
        zf, _, _ = integrate(prob, cfg)
        assert np.max(np.abs(zf.depth[mask] - 2.0)) < 1e-8

    def test_slanted_plane_perspective(self):
        """Analytic slanted plane z = 2 + 0.3 x under a perspective camera."""
        n = 64
        cam = flat_cam(n, n, fx=80.0)
        a = 0.3
        us, vs = np.meshgrid(np.arange(n, dtype=float), np.arange(n, dtype=float))
        ut = (us - cam.cx) / cam.fx
        # plane z = 2 + a*x with x = ut*z  =>  z = 2 / (1 - a*ut)
        z_true = 2.0 / (1.0 - a * ut)
        normal = np.tile(np.array([a, 0.0, -1.0]) / np.hypot(a, 1.0), (n, n, 1))
        mask = np.ones((n, n), bool)
        anchor = np.zeros((n, n), bool)
        anchor[n // 2, n // 2] = True
        prior = DepthField(np.where(anchor, z_true, 1.0), anchor)
        cfg = IntegrationConfig(projection="perspective", solver_tolerance=1e-12,
                                coupling_weight=0.0, outer_iterations=3)
        prob = IntegrationProblem(
            ClothedNormalMap(normal, mask, "g"), unit_map(n, [0, 0, 1]),
            prior, DepthField(np.where(anchor, 9.0, 0.0), anchor), cam,
        )
        zf, _, _ = integrate(prob, cfg)
        assert np.max(np.abs(zf.depth[mask] - z_true[mask]) / z_true[mask]) < 1e-4
