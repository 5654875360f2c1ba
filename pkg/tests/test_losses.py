import numpy as np
import pytest

from lf4d.losses import FeatureExtractor, LossWeights, angular_loss, combined_loss, spatial_loss
from lf4d.tensor import LightField, extract_epi

from util import central_difference, grad_close


class TestLossWeights:
    def test_validation(self):
        with pytest.raises(ValueError):
            LossWeights(-1.0, 1.0)
        with pytest.raises(ValueError):
            LossWeights(0.0, 0.0)


class TestAngularLoss:
    def test_zero_for_identical(self, rng):
        f = LightField(rng.random((1, 3, 3, 4, 4)))
        loss, grad = angular_loss(f, LightField(f.data.copy()))
        assert loss == 0.0 and not grad.any()

    def test_single_element_difference(self):
        a = np.zeros((1, 2, 2, 3, 3))
        b = a.copy()
        b[0, 1, 0, 2, 1] = 0.3
        loss, grad = angular_loss(LightField(b), LightField(a))
        assert loss == pytest.approx(0.09)
        assert grad[0, 1, 0, 2, 1] == pytest.approx(0.6)

    def test_gradient_is_twice_difference(self, rng):
        a = LightField(rng.random((2, 2, 2, 3, 3)))
        b = LightField(rng.random((2, 2, 2, 3, 3)))
        _, grad = angular_loss(a, b)
        assert np.allclose(grad, 2.0 * (a.data - b.data), atol=0)

    def test_equals_epi_grouped_energy(self, rng):
        a = LightField(rng.random((2, 3, 3, 4, 5)))
        b = LightField(rng.random((2, 3, 3, 4, 5)))
        loss, _ = angular_loss(a, b)
        grouped = 0.0
        for c in range(a.c):
            for y0 in range(a.Y):
                for t0 in range(a.T):
                    d = (extract_epi(a, "horizontal", y0, t0, c).data
                         - extract_epi(b, "horizontal", y0, t0, c).data)
                    grouped += float(np.sum(d * d))
        assert abs(loss - grouped) <= 1e-10 * loss

    def test_shape_mismatch(self, rng):
        a = LightField(rng.random((1, 2, 2, 3, 3)))
        b = LightField(rng.random((1, 2, 2, 3, 4)))
        with pytest.raises(ValueError):
            angular_loss(a, b)


class TestFeatureExtractor:
    def test_same_seed_identical(self):
        a = FeatureExtractor(seed=4)
        b = FeatureExtractor(seed=4)
        for la, lb in zip(a.layers, b.layers):
            assert np.array_equal(la.weights, lb.weights)

    def test_receptive_field(self):
        assert FeatureExtractor().receptive_field == 7

    def test_view_too_small_rejected(self, rng):
        from lf4d.tensor import FeatureTensor

        f = FeatureTensor(rng.random((1, 1, 2, 2, 6, 6)))
        with pytest.raises(ValueError):
            FeatureExtractor().forward(f)


class TestSpatialLoss:
    def test_zero_for_identical(self, rng):
        f = LightField(rng.random((1, 2, 2, 9, 9)))
        loss, grad = spatial_loss(f, LightField(f.data.copy()), FeatureExtractor(seed=1))
        assert loss == 0.0 and not grad.any()

    def test_view_duplication_keeps_average(self, rng):
        ext = FeatureExtractor(seed=2)
        a = LightField(rng.random((1, 2, 2, 8, 8)))
        b = LightField(rng.random((1, 2, 2, 8, 8)))
        base, _ = spatial_loss(a, b, ext)
        dup_a = LightField(np.concatenate([a.data, a.data], axis=1))
        dup_b = LightField(np.concatenate([b.data, b.data], axis=1))
        doubled, _ = spatial_loss(dup_a, dup_b, ext)
        assert abs(doubled - base) <= 1e-12 * max(base, 1.0)

    def test_gradient_matches_finite_differences(self, rng):
        ext = FeatureExtractor(seed=3)
        pred = LightField(rng.random((1, 2, 2, 8, 8)))
        truth = LightField(rng.random((1, 2, 2, 8, 8)))
        _, grad = spatial_loss(pred, truth, ext)

        def loss():
            return spatial_loss(pred, truth, ext)[0]

        fd = central_difference(loss, pred.data)
        assert grad_close(grad, fd)


class TestCombinedLoss:
    def test_alpha_zero_reduces_to_angular(self, rng):
        a = LightField(rng.random((1, 2, 2, 8, 8)))
        b = LightField(rng.random((1, 2, 2, 8, 8)))
        la, ga = angular_loss(a, b)
        total, grad, parts = combined_loss(a, b, LossWeights(0.0, 2.0))
        assert total == pytest.approx(2.0 * la)
        assert np.allclose(grad, 2.0 * ga, atol=0)
        assert parts["spatial"] == 0.0

    def test_beta_zero_reduces_to_spatial(self, rng):
        ext = FeatureExtractor(seed=5)
        a = LightField(rng.random((1, 2, 2, 8, 8)))
        b = LightField(rng.random((1, 2, 2, 8, 8)))
        ls, gs = spatial_loss(a, b, ext)
        total, grad, _ = combined_loss(a, b, LossWeights(1.5, 0.0), ext)
        assert total == pytest.approx(1.5 * ls)
        assert np.allclose(grad, 1.5 * gs, atol=0)

    def test_linearity_in_weights(self, rng):
        ext = FeatureExtractor(seed=6)
        a = LightField(rng.random((1, 2, 2, 8, 8)))
        b = LightField(rng.random((1, 2, 2, 8, 8)))
        ls, _ = spatial_loss(a, b, ext)
        la, _ = angular_loss(a, b)
        total, _, _ = combined_loss(a, b, LossWeights(0.7, 1.3), ext)
        assert total == pytest.approx(0.7 * ls + 1.3 * la, rel=1e-12)

    def test_missing_extractor_rejected(self, rng):
        a = LightField(rng.random((1, 2, 2, 8, 8)))
        with pytest.raises(ValueError):
            combined_loss(a, a, LossWeights(1.0, 1.0), None)

    def test_gradient_matches_finite_differences(self, rng):
        ext = FeatureExtractor(seed=7)
        pred = LightField(rng.random((1, 2, 2, 8, 8)))
        truth = LightField(rng.random((1, 2, 2, 8, 8)))
        _, grad, _ = combined_loss(pred, truth, LossWeights(0.5, 1.0), ext)

        def loss():
            return combined_loss(pred, truth, LossWeights(0.5, 1.0), ext)[0]

        assert grad_close(grad, central_difference(loss, pred.data))
