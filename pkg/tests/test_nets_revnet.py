import numpy as np
import pytest

from src.nets.cspn import CSPN, center_only_kernels
from src.nets.encoder import FrozenEncoder
from src.nets.extractors import GaussianFeatureExtractor, StyleFeatureExtractor
from src.nets.revnet import RevNet, rev_forward, rev_inverse
from src.nets.whiten import whiten_image
from src.utils.errors import InvalidInputError
from src.wct.linalg import covariance


class TestRevNet:
    def test_identity_at_initialization(self, rng):
        net = RevNet(rng)
        z = rng.normal(size=(6, 6, 32))
        np.testing.assert_array_equal(net.forward_features(z).value, z)

    @pytest.mark.parametrize("seed", range(5))
    def test_round_trip_random_weights(self, seed):
        gen = np.random.default_rng(seed)
        net = RevNet(gen)
        net.randomize(gen, scale=0.2)
        z = gen.normal(size=(16, 16, 32))
        back = net.inverse_features(net.forward_features(z)).value
        assert np.max(np.abs(back - z)) < 1e-10

    def test_image_round_trip(self, rng):
        net = RevNet(rng)
        net.randomize(rng)
        image = rng.uniform(size=(12, 10, 3))
        features = rev_forward(net, image)
        assert features.shape == (12, 10, 32)
        assert np.max(np.abs(rev_inverse(net, features).value - image)) < 1e-10

    def test_round_trip_float32(self, rng):
        net = RevNet(rng)
        net.randomize(rng)
        net.astype(np.float32)
        z = rng.normal(size=(8, 8, 32)).astype(np.float32)
        back = net.inverse_features(net.forward_features(z)).value
        assert np.max(np.abs(back - z)) < 1e-4

    def test_rejects_wrong_channel_count(self, rng):
        with pytest.raises(InvalidInputError):
            rev_forward(RevNet(rng), np.zeros((4, 4, 4)))

    def test_rejects_non_finite_pixels(self, rng):
        image = np.zeros((4, 4, 3))
        image[1, 1, 0] = np.nan
        with pytest.raises(InvalidInputError):
            rev_forward(RevNet(rng), image)

    def test_odd_block_count_is_rejected(self, rng):
        with pytest.raises(ValueError):
            RevNet(rng, n_blocks=3)


class TestCSPN:
    def test_kernels_are_normalized(self, rng):
        cspn = CSPN(rng)
        kernels = cspn.kernels(rng.normal(size=(7, 9, 3))).value
        assert kernels.shape == (7, 9, 9)
        np.testing.assert_allclose(kernels.sum(axis=-1), np.ones((7, 9)), atol=1e-6)

    def test_center_only_kernels_are_a_no_op(self, rng):
        cspn = CSPN(rng)
        image = rng.uniform(size=(6, 5, 3))
        out = cspn(image, None, iterations=4, kernels=center_only_kernels(6, 5))
        np.testing.assert_array_equal(out.value, image)

    def test_uniform_kernels_box_blur_an_impulse(self, rng):
        cspn = CSPN(rng)
        image = np.zeros((7, 7, 1))
        image[3, 3, 0] = 9.0
        out = cspn(image, None, iterations=1, kernels=np.full((7, 7, 9), 1.0 / 9.0)).value
        expected = np.zeros((7, 7, 1))
        expected[2:5, 2:5, 0] = 1.0
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_constant_image_is_preserved(self, rng):
        cspn = CSPN(rng)
        image = np.full((8, 8, 3), 0.25)
        out = cspn(image, rng.normal(size=(8, 8, 3))).value
        np.testing.assert_allclose(out, image, atol=1e-12)

    def test_guidance_shape_mismatch(self, rng):
        with pytest.raises(InvalidInputError):
            CSPN(rng)(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))

    def test_bad_kernel_override_shape(self, rng):
        with pytest.raises(InvalidInputError):
            CSPN(rng)(np.zeros((4, 4, 3)), None, kernels=np.zeros((4, 4, 8)))


class TestWhitening:
    def test_whitened_covariance_is_identity(self, rng):
        mix = rng.normal(size=(3, 3))
        image = (rng.normal(size=(20, 20, 3)) @ mix) + 0.3
        out = whiten_image(image)
        cov = covariance(out.reshape(-1, 3))
        np.testing.assert_allclose(cov, np.eye(3), atol=1e-6)
        np.testing.assert_allclose(out.reshape(-1, 3).mean(axis=0), np.zeros(3), atol=1e-12)

    def test_constant_image_maps_to_zero(self):
        out = whiten_image(np.full((5, 5, 3), 0.7))
        np.testing.assert_allclose(out, np.zeros((5, 5, 3)), atol=1e-12)

    def test_too_few_pixels(self):
        with pytest.raises(InvalidInputError):
            whiten_image(np.zeros((1, 3, 3)))


class TestEncoderAndExtractors:
    def test_encoder_is_deterministic_and_frozen(self):
        a, b = FrozenEncoder(), FrozenEncoder()
        assert a.fingerprint() == b.fingerprint()
        assert all(p.frozen for p in a.parameters())

    def test_encoder_stage_shapes(self, rng):
        maps = FrozenEncoder()(rng.uniform(size=(16, 16, 3)))
        assert [m.shape for m in maps] == [(8, 8, 16), (4, 4, 32), (2, 2, 64)]

    def test_gaussian_extractor_needs_enough_gaussians(self, rng):
        with pytest.raises(InvalidInputError):
            GaussianFeatureExtractor(rng)(np.zeros((10, 32)))

    def test_style_extractor_needs_large_enough_style(self, rng):
        with pytest.raises(InvalidInputError):
            StyleFeatureExtractor(rng)(np.zeros((32, 64, 32)))

    def test_style_extractor_sample_count(self, rng):
        out = StyleFeatureExtractor(rng)(rng.normal(size=(64, 64, 32)))
        assert out.shape == (16 * 16, 32)
