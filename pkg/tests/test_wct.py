import numpy as np
import pytest

from src.nets import tape as T
from src.utils.errors import EigenDecompositionError, InvalidInputError, WeightSumError
from src.wct.linalg import covariance, eigh, matrix_power_sym
from src.wct.predictor import TransformPredictor, predict_transform
from src.wct.transform import (StyleTransform, apply_transform, closed_form_transform, covariance_loss,
                               interpolate_styles)


def full_rank_samples(gen, n, dim=32):
    mix = 0.3 * gen.normal(size=(dim, dim)) / np.sqrt(dim) + np.eye(dim)
    return gen.normal(size=(n, dim)) @ mix + gen.normal(size=dim)


class TestCovariance:
    def test_identical_rows_give_zero(self):
        np.testing.assert_array_equal(covariance(np.tile([1.0, 2.0, 3.0], (5, 1))), np.zeros((3, 3)))

    def test_two_opposite_samples(self):
        v = np.array([1.0, -2.0, 0.5])
        np.testing.assert_allclose(covariance(np.stack([v, -v])), np.outer(v, v), atol=1e-15)

    def test_standard_normal_is_close_to_identity(self, rng):
        cov = covariance(rng.normal(size=(100_000, 4)))
        assert np.max(np.abs(cov - np.eye(4))) < 0.05

    def test_matches_numpy_biased_estimator(self, rng):
        x = rng.normal(size=(50, 6))
        np.testing.assert_allclose(covariance(x), np.cov(x, rowvar=False, bias=True), atol=1e-12)

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            covariance(np.zeros((1, 3)))


class TestEigh:
    def test_identity(self):
        result = eigh(np.eye(5))
        np.testing.assert_array_equal(result.eigenvalues, np.ones(5))

    def test_diagonal_sorted_descending(self):
        result = eigh(np.diag([1.0, 4.0, 2.0]))
        np.testing.assert_allclose(result.eigenvalues, [4.0, 2.0, 1.0])
        np.testing.assert_allclose(np.abs(result.eigenvectors), np.eye(3)[:, [1, 2, 0]], atol=1e-12)

    def test_random_psd_reconstruction(self, rng):
        a = rng.normal(size=(12, 12))
        m = a @ a.T + 0.1 * np.eye(12)
        result = eigh(m)
        np.testing.assert_allclose(result.eigenvectors @ result.eigenvectors.T, np.eye(12), atol=1e-8)
        np.testing.assert_allclose(result.reconstruct(), m, atol=1e-8)
        np.testing.assert_allclose(result.eigenvalues, np.sort(np.linalg.eigvalsh(m))[::-1], rtol=1e-10)

    def test_sign_convention(self, rng):
        a = rng.normal(size=(6, 6))
        vecs = eigh(a @ a.T).eigenvectors
        for j in range(vecs.shape[1]):
            first = vecs[np.flatnonzero(np.abs(vecs[:, j]) > 1e-15)[0], j]
            assert first > 0

    def test_floor_applies_to_rank_deficient_input(self):
        result = eigh(np.diag([2.0, 0.0, 0.0]))
        np.testing.assert_allclose(result.eigenvalues, [2.0, 1e-5, 1e-5])

    def test_non_finite_input(self):
        with pytest.raises(EigenDecompositionError):
            eigh(np.array([[1.0, np.nan], [np.nan, 1.0]]))

    def test_matrix_power_inverse_square_root(self, rng):
        a = rng.normal(size=(5, 5))
        m = a @ a.T + np.eye(5)
        inv_sqrt = matrix_power_sym(m, -0.5)
        np.testing.assert_allclose(inv_sqrt @ m @ inv_sqrt, np.eye(5), atol=1e-10)


class TestClosedForm:
    @pytest.mark.parametrize("seed", range(10))
    def test_covariance_match(self, seed):
        gen = np.random.default_rng(seed)
        f_c = full_rank_samples(gen, 400)
        f_s = full_rank_samples(gen, 300)
        tr = closed_form_transform(f_c, f_s)
        combined = tr.combined()
        assert np.max(np.abs(combined @ covariance(f_c) @ combined.T - covariance(f_s))) < 1e-6

    def test_whitening_alone_gives_identity(self, rng):
        f_c = full_rank_samples(rng, 500)
        tr = closed_form_transform(f_c, full_rank_samples(rng, 500))
        whitened = (f_c - f_c.mean(axis=0)) @ tr.t_c.T
        np.testing.assert_allclose(covariance(whitened), np.eye(32), atol=1e-6)

    def test_mean_match(self, rng):
        feature = full_rank_samples(rng, 256).reshape(16, 16, 32)
        tr = closed_form_transform(feature.reshape(-1, 32), full_rank_samples(rng, 256))
        out = apply_transform(feature, tr)
        np.testing.assert_allclose(out.reshape(-1, 32).mean(axis=0), tr.mu_s, atol=1e-9)

    def test_covariance_loss_of_transformed_features(self, rng):
        f_c = full_rank_samples(rng, 400)
        f_s = full_rank_samples(rng, 400)
        tr = closed_form_transform(f_c, f_s)
        f_cs = (f_c - f_c.mean(axis=0)) @ tr.combined().T
        assert covariance_loss(f_cs, f_s - f_s.mean(axis=0)) < 1e-10
        assert covariance_loss(f_s - f_s.mean(axis=0), f_s - f_s.mean(axis=0)) == 0.0

    def test_covariance_loss_increases_when_scaled(self, rng):
        f_s = full_rank_samples(rng, 200)
        centered = f_s - f_s.mean(axis=0)
        assert covariance_loss(2 * centered, centered) > covariance_loss(centered, centered)

    def test_mismatched_dimensions(self, rng):
        with pytest.raises(InvalidInputError):
            closed_form_transform(rng.normal(size=(10, 4)), rng.normal(size=(10, 5)))

    def test_apply_transform_matches_pixel_loop(self, rng):
        feature = rng.normal(size=(5, 4, 32))
        tr = closed_form_transform(full_rank_samples(rng, 100), full_rank_samples(rng, 100))
        out = apply_transform(feature, tr)
        combined = tr.combined()
        for i in range(5):
            for j in range(4):
                expected = combined @ (feature[i, j] - tr.mu_f) + tr.mu_s
                np.testing.assert_allclose(out[i, j], expected, atol=1e-12)

    def test_apply_transform_with_doubling(self):
        dim = 32
        tr = StyleTransform(np.eye(dim), 2 * np.eye(dim), np.zeros(dim), np.zeros(dim))
        feature = np.arange(2 * 3 * dim, dtype=np.float64).reshape(2, 3, dim)
        np.testing.assert_array_equal(apply_transform(feature, tr), 2 * feature)

    def test_transform_tensor_round_trip(self, rng):
        tr = closed_form_transform(full_rank_samples(rng, 100), full_rank_samples(rng, 100))
        back = StyleTransform.from_tensors(tr.to_tensors())
        np.testing.assert_array_equal(back.combined(), tr.combined())
        assert back.is_finite()


class TestInterpolation:
    @pytest.fixture
    def two_transforms(self, rng):
        f_c = full_rank_samples(rng, 200)
        mu_f = f_c.mean(axis=0)
        a = closed_form_transform(f_c, full_rank_samples(rng, 200), mu_f=mu_f)
        b = closed_form_transform(f_c, full_rank_samples(rng, 200), mu_f=mu_f)
        return a, b

    def test_half_blend_is_linear(self, two_transforms, rng):
        a, b = two_transforms
        feature = rng.normal(size=(6, 6, 32))
        blended = apply_transform(feature, interpolate_styles([(a, 0.5), (b, 0.5)]))
        expected = 0.5 * apply_transform(feature, a) + 0.5 * apply_transform(feature, b)
        assert np.max(np.abs(blended - expected)) < 1e-12

    def test_endpoint_reproduces_single_style(self, two_transforms, rng):
        a, b = two_transforms
        feature = rng.normal(size=(4, 4, 32))
        only_a = interpolate_styles([(a, 1.0), (b, 0.0)])
        np.testing.assert_array_equal(apply_transform(feature, only_a), apply_transform(feature, a))

    @pytest.mark.parametrize("weights", [(0.6, 0.6), (1.2, -0.2), (0.5, 0.4999)])
    def test_bad_weights(self, two_transforms, weights):
        a, b = two_transforms
        with pytest.raises(WeightSumError):
            interpolate_styles([(a, weights[0]), (b, weights[1])])

    def test_empty_list(self):
        with pytest.raises(InvalidInputError):
            interpolate_styles([])

    def test_different_content_means(self, rng):
        a = closed_form_transform(full_rank_samples(rng, 100), full_rank_samples(rng, 100))
        b = closed_form_transform(full_rank_samples(rng, 100), full_rank_samples(rng, 100))
        with pytest.raises(InvalidInputError):
            interpolate_styles([(a, 0.5), (b, 0.5)])


class TestPredictor:
    def test_untrained_predictor_returns_identity(self, rng):
        predictor = TransformPredictor(rng, dim=8, hidden=16)
        tr = predict_transform(rng.normal(size=(40, 8)), rng.normal(size=(50, 8)), predictor)
        np.testing.assert_array_equal(tr.t_c, np.eye(8))
        np.testing.assert_array_equal(tr.t_s, np.eye(8))
        assert isinstance(tr.t_c, np.ndarray)

    def test_explicit_means_are_carried(self, rng):
        predictor = TransformPredictor(rng, dim=4, hidden=8)
        mu_f = np.arange(4.0)
        tr = predict_transform(rng.normal(size=(20, 4)), rng.normal(size=(20, 4)), predictor, mu_f=mu_f)
        np.testing.assert_array_equal(tr.mu_f, mu_f)

    def test_inside_tape_keeps_tensors(self, rng):
        predictor = TransformPredictor(rng, dim=4, hidden=8)
        with T.Tape():
            tr = predict_transform(rng.normal(size=(20, 4)), rng.normal(size=(20, 4)), predictor)
            assert isinstance(tr.t_c, T.Tensor)
        assert isinstance(tr.detach().t_c, np.ndarray)
