import numpy as np
import pytest

from mvavatar.body import BodyParams, average_params, landmarks3d, skin
from mvavatar.camera import relative_rotation
from mvavatar.fitting import FitConfig, total_loss
from mvavatar.humanoid import JOINT_NAMES, default_model
from mvavatar.synth import (
    benchmark_suite,
    load_scene,
    make_clothed,
    make_observations,
    make_scene,
    perturb_estimates,
    place_cameras,
    save_scene,
)


@pytest.fixture(scope="module")
def model():
    return default_model()


class TestPlaceCameras:
    def test_eight_cameras_spacing(self):
        cams = place_cameras(8, 2.5, 1.6, [0.0, 1.6, 0.0], 128)
        assert len(cams) == 8
        centers = np.array([c.center for c in cams])
        assert np.allclose(np.linalg.norm(centers - [0, 1.6, 0], axis=1), 2.5)
        # camera 4 sits opposite camera 0
        assert np.allclose(centers[4], [0.0, 1.6, -2.5], atol=1e-12)
        angles = np.degrees(np.arctan2(centers[:, 0], centers[:, 2]))
        spacing = np.diff(np.unwrap(np.radians(angles)))
        assert np.allclose(np.degrees(np.abs(spacing)), 45.0, atol=1e-9)

    def test_two_camera_rig(self):
        cams = place_cameras(2, 2.0, 1.5, [0.0, 1.5, 0.0], 64)
        assert len(cams) == 2
        assert np.allclose(cams[0].center, [0.0, 1.5, 2.0], atol=1e-12)
        assert np.allclose(cams[1].center, [0.0, 1.5, -2.0], atol=1e-12)

    def test_front_back_relative_rotation(self):
        cams = place_cameras(8, 2.5, 1.6, [0.0, 1.6, 0.0], 128)
        rel = relative_rotation(cams[0], cams[4])
        # 180 degrees about world-up: in camera frames, forward flips and the
        # down axis is preserved
        assert np.max(np.abs(rel.apply([0, 0, 1.0]) - [0, 0, -1.0])) < 1e-9
        assert np.max(np.abs(rel.apply([0, 1.0, 0]) - [0, 1.0, 0])) < 1e-9


class TestMakeClothed:
    def test_zero_amplitude_unchanged(self, model):
        body = skin(model, BodyParams.zeros(model))
        clothed = make_clothed(body, seed=3, amplitude_m=0.0)
        assert np.array_equal(clothed.vertices, body.vertices)

    def test_displacement_bounded(self, model):
        body = skin(model, BodyParams.zeros(model))
        amp = 0.03
        clothed = make_clothed(body, seed=4, amplitude_m=amp)
        disp = np.linalg.norm(clothed.vertices - body.vertices, axis=1)
        assert disp.max() <= amp + 1e-12
        assert disp.max() > 0.5 * amp  # the bump reaches a good fraction

    def test_seed_decorrelation(self, model):
        body = skin(model, BodyParams.zeros(model))
        amp = 0.04
        a = make_clothed(body, seed=5, amplitude_m=amp)
        b = make_clothed(body, seed=6, amplitude_m=amp)
        diff = np.linalg.norm(a.vertices - b.vertices, axis=1)
        assert np.mean(diff > amp / 10) > 0.5


class TestMakeObservations:
    def test_oracle_self_consistency(self, model):
        scene = make_scene(subject_seed=31, noise_seed=33, amplitude_m=0.0,
                           pose="rest", n_views=4, resolution=96, landmark_sigma_px=0.0)
        bd = total_loss(scene.gt_params, model, scene.observations, FitConfig())
        assert bd.total < 2.0 / 96

    def test_landmark_noise_magnitude(self, model):
        sigma = 3.0
        scene = make_scene(subject_seed=41, noise_seed=43, amplitude_m=0.0,
                           pose="rest", n_views=8, resolution=128,
                           landmark_sigma_px=sigma)
        from mvavatar.fitting import loss_landmarks

        loss = loss_landmarks(scene.gt_params, model, scene.observations)
        diag = scene.cameras[0].diagonal_px
        expected_per_view = sigma * np.sqrt(np.pi / 2.0) / diag
        assert loss / scene.n_views == pytest.approx(expected_per_view, rel=0.2)

    def test_occluded_wrist_low_confidence(self, model):
        # wrist swung in front of the chest: hidden from the back camera
        params = BodyParams.zeros(model)
        params.theta[JOINT_NAMES.index("l_shoulder")] = [0.0, -np.pi / 2, 0.0]
        body = skin(model, params)
        clothed = make_clothed(body, seed=0, amplitude_m=0.0)
        from mvavatar.body import joints3d

        eye = float(joints3d(model, params)[model.head_joint][1])
        cams = place_cameras(2, 2.5, eye, [0.0, eye, 0.0], 128, focal_px=110.0)
        lm = landmarks3d(model, params)
        obs, _ = make_observations(cams, clothed, lm, noise_sigma_px=0.0, seed=1)
        wrist = JOINT_NAMES.index("l_wrist")
        assert obs[0].landmark_confidences[wrist] == 1.0   # front view sees it
        assert obs[1].landmark_confidences[wrist] == 0.2   # back view occluded


class TestPerturbEstimates:
    def test_zero_sigma_copies(self, model):
        gt = BodyParams(np.ones(model.n_shape) * 0.3, np.zeros((model.n_joints, 3)))
        estimates = perturb_estimates(gt, 4, 0.0, 0.0, seed=9)
        for e in estimates:
            assert np.array_equal(e.to_vector(), gt.to_vector())

    def test_mean_concentration(self, model):
        gt = BodyParams.zeros(model)
        wins = 0
        for seed in range(100):
            estimates = perturb_estimates(gt, 8, 0.09, 0.05, seed=seed)
            avg = average_params(estimates)
            avg_err = np.linalg.norm(avg.to_vector() - gt.to_vector())
            worst = max(np.linalg.norm(e.to_vector() - gt.to_vector()) for e in estimates)
            wins += avg_err < worst
        assert wins >= 95

    def test_beta_clamped_to_box(self, model):
        gt = BodyParams(np.full(model.n_shape, 4.8), np.zeros((model.n_joints, 3)))
        estimates = perturb_estimates(gt, 16, 0.5, 0.0, seed=2)
        for e in estimates:
            assert np.all(np.abs(e.beta) <= 5.0)


class TestSceneReproducibility:
    def test_byte_identical_regeneration(self):
        a = make_scene(subject_seed=51, noise_seed=53, amplitude_m=0.02,
                       pose="walking", n_views=4, resolution=96)
        b = make_scene(subject_seed=51, noise_seed=53, amplitude_m=0.02,
                       pose="walking", n_views=4, resolution=96)
        assert a.gt_clothed.vertices.tobytes() == b.gt_clothed.vertices.tobytes()
        for oa, ob in zip(a.observations, b.observations):
            assert np.array_equal(oa.silhouette, ob.silhouette)
            assert oa.landmark_pixels.tobytes() == ob.landmark_pixels.tobytes()
        for ea, eb in zip(a.noisy_estimates, b.noisy_estimates):
            assert ea.to_vector().tobytes() == eb.to_vector().tobytes()

    def test_save_load_roundtrip(self, tmp_path):
        scene = make_scene(subject_seed=61, noise_seed=63, amplitude_m=0.01,
                           pose="rest", n_views=2, resolution=64)
        save_scene(scene, tmp_path / "scene")
        back = load_scene(tmp_path / "scene")
        assert back.n_views == 2
        assert back.pose == "rest"
        assert np.array_equal(back.gt_clothed.vertices, scene.gt_clothed.vertices)
        for oa, ob in zip(scene.observations, back.observations):
            assert np.array_equal(oa.silhouette, ob.silhouette)
            assert np.allclose(ob.landmark_pixels, oa.landmark_pixels)
            assert np.allclose(ob.clothed_normals.normal, oa.clothed_normals.normal,
                               atol=1e-6)
        assert np.allclose(back.bump_center, scene.bump_center)

    def test_expected_layout(self, tmp_path):
        scene = make_scene(subject_seed=71, noise_seed=73, amplitude_m=0.0,
                           pose="rest", n_views=2, resolution=64)
        save_scene(scene, tmp_path / "s")
        for rel in ("cameras.json", "gt_clothed.ply", "gt_body.ply", "gt_params.json",
                    "view_0/mask.pgm", "view_0/normals.pfm", "view_0/depth.pfm",
                    "view_0/landmarks.json", "view_1/mask.pgm",
                    "estimates/view_0.json", "estimates/view_1.json"):
            assert (tmp_path / "s" / rel).exists(), rel


class TestBenchmarkSuite:
    def test_specs(self):
        specs = benchmark_suite(n_subjects=10)
        assert len(specs) == 10
        seeds = {s["subject_seed"] for s in specs}
        assert len(seeds) == 10
        assert {s["amplitude_m"] for s in specs} == {0.0, 0.01, 0.02, 0.04}
        assert {s["pose"] for s in specs} == {"rest", "walking", "arms_raised"}
