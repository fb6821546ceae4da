import json

import numpy as np
import pytest

from src.scene.bundle_io import load_scene, save_scene
from src.scene.camera import Camera, make_camera
from src.scene.deformation import bilinear_weights, deform
from src.scene.flow import FlowField, flow_oracle, map_points, view
from src.scene.generator import SceneSpec, generate_scene
from src.utils.errors import (FormatError, InvalidInputError, SceneSpecError, ViewMismatchError,
                              WrongMagicError)


class TestCamera:
    def test_rotation_must_be_orthonormal(self):
        with pytest.raises(InvalidInputError):
            Camera(fx=10, fy=10, cx=8, cy=8, width=16, height=16, R=np.diag([1.0, 2.0, 1.0]))

    def test_focal_length_must_be_positive(self):
        with pytest.raises(InvalidInputError):
            Camera(fx=0.0, fy=10, cx=8, cy=8, width=16, height=16)

    def test_round_trip_through_dict(self):
        cam = make_camera([1.0, 0.5, 3.0], [0.0, 0.0, 0.0], 32, 50.0)
        back = Camera.from_dict(json.loads(json.dumps(cam.to_dict())))
        np.testing.assert_array_equal(back.R, cam.R)
        np.testing.assert_array_equal(back.T, cam.T)
        assert (back.fx, back.cx, back.width) == (cam.fx, cam.cx, cam.width)

    def test_center_and_projection(self):
        cam = make_camera([0.0, 0.0, 4.0], [0.0, 0.0, 0.0], 16, 45.0)
        np.testing.assert_allclose(cam.center, [0.0, 0.0, 4.0], atol=1e-12)
        uv, z = cam.project(np.zeros((1, 3)))
        np.testing.assert_allclose(uv, [[8.0, 8.0]], atol=1e-12)
        np.testing.assert_allclose(z, [4.0])


class TestGenerator:
    def test_same_seed_same_bundle(self, tiny_bundle):
        again = generate_scene(tiny_bundle.spec, seed=0)
        assert again.bundle_id == tiny_bundle.bundle_id
        np.testing.assert_array_equal(again.gaussians.center.value, tiny_bundle.gaussians.center.value)
        for key, image in tiny_bundle.ground_truth.items():
            np.testing.assert_array_equal(again.ground_truth[key], image)

    def test_other_seed_other_scene(self, tiny_bundle):
        other = generate_scene(tiny_bundle.spec, seed=1)
        assert other.bundle_id != tiny_bundle.bundle_id
        assert not np.array_equal(other.ground_truth[(0, 0)], tiny_bundle.ground_truth[(0, 0)])

    def test_layout_of_tiny_bundle(self, tiny_bundle):
        assert len(tiny_bundle.cameras) == 4
        assert len(tiny_bundle.gaussians) == 80
        np.testing.assert_array_equal(tiny_bundle.timestamps, [0.0, 1.0])
        assert tiny_bundle.held_out_camera == 2
        assert tiny_bundle.training_cameras() == [0, 1, 3]

    def test_ground_truth_is_quantized(self, tiny_bundle):
        image = tiny_bundle.ground_truth[(1, 1)]
        assert image.shape == (16, 16, 3)
        np.testing.assert_array_equal(np.round(image * 255) / 255, image)

    @pytest.mark.parametrize("resolution", [8, 15, 513])
    def test_resolution_out_of_range(self, resolution):
        with pytest.raises(SceneSpecError):
            generate_scene(SceneSpec(resolution=resolution), seed=0)

    def test_unknown_motion(self):
        with pytest.raises(SceneSpecError):
            generate_scene(SceneSpec(motion="spiral", resolution=16), seed=0)

    def test_unknown_spec_key(self):
        with pytest.raises(SceneSpecError):
            SceneSpec.from_dict({"n_spheres": 1, "wobble": 2})


class TestDeformation:
    def test_bilinear_partition_of_unity(self, rng):
        weights = bilinear_weights(rng.uniform(-1.0, 9.0, size=(1000, 2)), 8)
        assert np.max(np.abs(weights.sum(axis=1) - 1.0)) < 1e-12

    def test_zero_heads_leave_gaussians_in_place(self, tiny_bundle):
        g = tiny_bundle.gaussians
        moved = deform(g, tiny_bundle.deformation, 0.7)
        np.testing.assert_array_equal(moved.center.value, g.center.value)
        np.testing.assert_array_equal(moved.feature.value, g.feature.value)

    def test_static_skips_the_field(self, tiny_bundle):
        moved = deform(tiny_bundle.gaussians, tiny_bundle.deformation, 0.3, static=True)
        assert moved.center is tiny_bundle.gaussians.center

    def test_time_outside_unit_interval(self, tiny_bundle):
        with pytest.raises(ValueError):
            deform(tiny_bundle.gaussians, tiny_bundle.deformation, 1.5)


class TestFlowOracle:
    def test_identical_views_give_zero_flow(self, tiny_bundle):
        v = view(tiny_bundle, 1, 0.0)
        field = flow_oracle(tiny_bundle, v, v)
        assert not np.any(field.flow)
        assert field.valid.all()

    def test_round_trip_returns_to_source_pixel(self, tiny_bundle):
        a = view(tiny_bundle, 0, 0.0)
        b = view(tiny_bundle, 1, 1.0)
        centers = tiny_bundle.cameras[0].pixel_centers().reshape(-1, 2)
        forward, valid = map_points(tiny_bundle, a, b, centers)
        assert valid.sum() > 0
        back, back_valid = map_points(tiny_bundle, b, a, forward[valid])
        assert back_valid.sum() > 0
        error = np.linalg.norm(back[back_valid] - centers[valid][back_valid], axis=1)
        assert np.max(error) < 0.5

    def test_row_layout_flow_is_horizontal(self):
        bundle = generate_scene(SceneSpec(n_spheres=1, n_cameras=2, resolution=16, n_timesteps=1,
                                          n_gaussians=0, layout="row"), seed=3)
        field = flow_oracle(bundle, view(bundle, 0, 0.0), view(bundle, 1, 0.0))
        assert field.valid.any()
        assert np.max(np.abs(field.flow[..., 1][field.valid])) < 1e-9
        assert np.all(field.flow[..., 0][field.valid] < 0)

    def test_row_layout_flow_magnitude_is_focal_times_baseline_over_depth(self):
        bundle = generate_scene(SceneSpec(n_spheres=1, n_cameras=2, resolution=16, n_timesteps=1,
                                          n_gaussians=0, layout="row"), seed=3)
        cam = bundle.cameras[0]
        field = flow_oracle(bundle, view(bundle, 0, 0.0), view(bundle, 1, 0.0))
        origin, dirs = cam.rays(cam.pixel_centers())
        depth = cam.world_to_camera(bundle.analytic.intersect(origin, dirs, 0.0).point.reshape(-1, 3))[:, 2]
        expected = -cam.fx * bundle.spec.baseline / depth.reshape(cam.height, cam.width)
        np.testing.assert_allclose(field.flow[..., 0][field.valid], expected[field.valid], rtol=1e-6)

    def test_views_from_another_bundle(self, tiny_bundle):
        other = generate_scene(tiny_bundle.spec, seed=5)
        with pytest.raises(ViewMismatchError):
            flow_oracle(tiny_bundle, view(other, 0, 0.0), view(tiny_bundle, 1, 0.0))

    def test_unknown_camera(self, tiny_bundle):
        with pytest.raises(ViewMismatchError):
            flow_oracle(tiny_bundle, view(tiny_bundle, 9, 0.0), view(tiny_bundle, 1, 0.0))

    def test_zero_field_helper(self):
        field = FlowField.zeros(3, 4)
        assert (field.height, field.width) == (3, 4)
        assert field.valid_fraction == 1.0


class TestBundleIO:
    def test_save_load_round_trip(self, tiny_bundle, tmp_path):
        save_scene(tiny_bundle, tmp_path / "scene.json")
        assert (tmp_path / "images" / "cam00_t000.ppm").exists()
        loaded = load_scene(tmp_path / "scene.json")
        assert loaded.bundle_id == tiny_bundle.bundle_id
        assert loaded.held_out_camera == tiny_bundle.held_out_camera
        np.testing.assert_array_equal(loaded.gaussians.feature.value, tiny_bundle.gaussians.feature.value)
        np.testing.assert_array_equal(loaded.cameras[3].R, tiny_bundle.cameras[3].R)
        for key, image in tiny_bundle.ground_truth.items():
            np.testing.assert_array_equal(loaded.ground_truth[key], image)
        for (name, a), (_, b) in zip(loaded.deformation.named_parameters(),
                                     tiny_bundle.deformation.named_parameters()):
            np.testing.assert_array_equal(a.value, b.value, err_msg=name)

    def test_not_a_scene_document(self, tmp_path):
        path = tmp_path / "scene.json"
        path.write_text(json.dumps({"format": "something-else"}), encoding="utf-8")
        with pytest.raises(WrongMagicError):
            load_scene(path)

    def test_malformed_json_names_offset(self, tmp_path):
        path = tmp_path / "scene.json"
        path.write_text('{"format": ', encoding="utf-8")
        with pytest.raises(FormatError, match="byte offset"):
            load_scene(path)
