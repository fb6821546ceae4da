import numpy as np
import pytest

from src.formats.style_cache import StyleCache
from src.stylize.gaussian import GaussianStylizer
from src.stylize.per_frame import PerFrameStylizer
from src.utils.errors import InvalidInputError, ViewMismatchError
from src.wct.transform import interpolate_styles


class TestGaussianStylizer:
    @pytest.mark.parametrize("mode", ["predicted", "closed-form"])
    def test_stylize_shapes(self, tiny_state, style_images, mode):
        stylizer = GaussianStylizer(tiny_state, tile=8, transform=mode)
        stylizer.set_style(style_images[0])
        frame = stylizer.stylize(1, 0.5)
        assert frame.transformed.shape == (16, 16, 3)
        assert frame.reconstruction.shape == (16, 16, 3)
        assert frame.propagated.shape == (16, 16, 3)
        assert frame.output is frame.propagated
        assert np.all(np.isfinite(frame.output))
        assert set(stylizer.timings) == {"render", "transform", "decode", "propagate", "total"}

    def test_without_propagation(self, tiny_state, style_images):
        stylizer = GaussianStylizer(tiny_state, tile=8, propagate=False)
        stylizer.set_style(style_images[1])
        frame = stylizer.stylize(0, 0.0)
        assert frame.propagated is None
        assert frame.output is frame.transformed

    def test_untrained_predictor_only_shifts_means(self, tiny_state, style_images):
        stylizer = GaussianStylizer(tiny_state, tile=8, transform="predicted")
        stylizer.set_style(style_images[0])
        tr = stylizer.transform
        np.testing.assert_array_equal(tr.combined(), np.eye(32))
        np.testing.assert_array_equal(tr.mu_f, tiny_state.gaussians.feature.value.mean(axis=0))

    def test_stylize_before_style(self, tiny_state):
        with pytest.raises(InvalidInputError):
            GaussianStylizer(tiny_state, tile=8).stylize(0, 0.0)

    def test_unknown_transform_mode(self, tiny_state):
        with pytest.raises(InvalidInputError):
            GaussianStylizer(tiny_state, transform="magic")

    def test_unknown_camera(self, tiny_state, style_images):
        stylizer = GaussianStylizer(tiny_state, tile=8)
        stylizer.set_style(style_images[0])
        with pytest.raises(ViewMismatchError):
            stylizer.stylize(9, 0.0)

    def test_style_image_must_be_rgb(self, tiny_state):
        with pytest.raises(InvalidInputError):
            GaussianStylizer(tiny_state).set_style(np.zeros((64, 64)))

    def test_same_transform_for_every_view(self, tiny_state, style_images):
        stylizer = GaussianStylizer(tiny_state, tile=8, transform="closed-form")
        stylizer.set_style(style_images[0])
        first = stylizer.transform.combined().copy()
        stylizer.stylize(0, 0.0)
        stylizer.stylize(3, 1.0)
        np.testing.assert_array_equal(stylizer.transform.combined(), first)


class TestInterpolation:
    @pytest.fixture
    def transforms(self, tiny_state, style_images):
        stylizer = GaussianStylizer(tiny_state, tile=8, transform="closed-form", propagate=False)
        stylizer.set_style(style_images[0])
        a = stylizer.transform
        stylizer.set_style(style_images[1])
        b = stylizer.transform
        return stylizer, a, b

    def test_blend_is_linear_before_propagation(self, transforms, tiny_state):
        stylizer, a, b = transforms
        feature = stylizer.render_view(2, 0.5).feature.value
        stylizer.set_transform(a)
        f_a = stylizer.transform_features(feature)
        stylizer.set_transform(b)
        f_b = stylizer.transform_features(feature)
        stylizer.set_transform(interpolate_styles([(a, 0.5), (b, 0.5)]))
        blended = stylizer.transform_features(feature)
        assert np.max(np.abs(blended - (0.5 * f_a + 0.5 * f_b))) < 1e-12

    def test_endpoints_reproduce_each_style(self, transforms):
        stylizer, a, b = transforms
        stylizer.set_transform(a)
        only_a = stylizer.stylize(1, 0.0).transformed
        stylizer.set_transform(interpolate_styles([(a, 1.0), (b, 0.0)]))
        np.testing.assert_array_equal(stylizer.stylize(1, 0.0).transformed, only_a)


class TestStyleCache:
    def test_second_set_style_is_a_cache_hit(self, tiny_state, style_images, tmp_path, monkeypatch):
        cache = StyleCache(tmp_path / "cache")
        stylizer = GaussianStylizer(tiny_state, tile=8, cache=cache)
        stylizer.set_style(style_images[0], style_key=b"stripes")
        first = stylizer.transform
        assert len(list((tmp_path / "cache").iterdir())) == 1

        def fail(_):
            raise AssertionError("transform recomputed despite a cached entry")

        monkeypatch.setattr(stylizer, "compute_transform", fail)
        stylizer.set_style(style_images[0], style_key=b"stripes")
        np.testing.assert_array_equal(stylizer.transform.combined(), first.combined())
        np.testing.assert_array_equal(stylizer.transform.mu_s, first.mu_s)

    def test_modes_do_not_share_entries(self, tiny_state, style_images, tmp_path):
        cache = StyleCache(tmp_path)
        GaussianStylizer(tiny_state, tile=8, cache=cache).set_style(style_images[0], style_key=b"s")
        GaussianStylizer(tiny_state, tile=8, transform="closed-form", cache=cache).set_style(
            style_images[0], style_key=b"s")
        assert len(list(tmp_path.glob("*.g4ds"))) == 2

    def test_style_resolution_changes_the_entry(self, tiny_state, style_images, tmp_path):
        cache = StyleCache(tmp_path)
        small = style_images[0]
        large = np.repeat(np.repeat(small, 2, axis=0), 2, axis=1)
        stylizer = GaussianStylizer(tiny_state, tile=8, cache=cache)
        stylizer.set_style(small, style_key=b"same file")
        stylizer.set_style(large, style_key=b"same file")
        assert len(list(tmp_path.glob("*.g4ds"))) == 2


class TestPerFrameStylizer:
    def test_output_shape(self, tiny_state, style_images):
        stylizer = PerFrameStylizer(tiny_state, tile=8)
        stylizer.set_style(style_images[0])
        frame = stylizer.stylize(2, 1.0)
        assert frame.output.shape == (16, 16, 3)
        assert frame.propagated is None
        assert np.all(np.isfinite(frame.output))

    def test_requires_style(self, tiny_state):
        with pytest.raises(InvalidInputError):
            PerFrameStylizer(tiny_state).stylize(0, 0.0)
