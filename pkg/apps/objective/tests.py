import math

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from apps.core.exceptions import ShapeMismatchError
from apps.core.geometry import make_geometry
from apps.gaussians.cloud import GaussianCloud
from apps.gaussians.neighborhood import neighborhood_for
from apps.gaussians.rasterizer import rasterize, rasterize_vjp
from apps.projector.operators import adjoint_array, forward_array

from .losses import LossWeights, composite_loss, l1_loss, tv
from .metrics import psnr, ssim_metric
from .ssim import SsimConfig, _window, _window_adjoint, ssim


def central_difference(fn, x, indices, eps=1e-6):
    grads = []
    for index in indices:
        bumped = x.copy()
        bumped[index] += eps
        dipped = x.copy()
        dipped[index] -= eps
        grads.append((fn(bumped) - fn(dipped)) / (2.0 * eps))
    return np.array(grads)


def brute_force_ssim(a, b, config):
    taps = config.taps()
    window = np.outer(taps, taps)
    pad = config.window_size // 2
    a_pad = np.pad(a, pad, mode='reflect')
    b_pad = np.pad(b, pad, mode='reflect')
    values = np.zeros(a.shape)
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            pa = a_pad[i:i + config.window_size, j:j + config.window_size]
            pb = b_pad[i:i + config.window_size, j:j + config.window_size]
            mu_a, mu_b = np.sum(window * pa), np.sum(window * pb)
            var_a = np.sum(window * pa * pa) - mu_a ** 2
            var_b = np.sum(window * pb * pb) - mu_b ** 2
            cov = np.sum(window * pa * pb) - mu_a * mu_b
            values[i, j] = ((2 * mu_a * mu_b + config.c1) * (2 * cov + config.c2)) / (
                (mu_a ** 2 + mu_b ** 2 + config.c1) * (var_a + var_b + config.c2)
            )
    return values.mean()


class L1LossTests(SimpleTestCase):

    def test_identical_inputs(self):
        data = np.random.default_rng(0).random((1, 5, 6))
        value, grad = l1_loss(data, data)
        self.assertEqual(value, 0.0)
        self.assertFalse(np.any(grad))

    def test_constant_offset(self):
        measured = np.zeros((1, 4, 5))
        value, grad = l1_loss(measured + 0.5, measured)
        self.assertAlmostEqual(value, 0.5)
        np.testing.assert_allclose(grad, 1.0 / 20)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        measured = rng.random((8, 8))
        predicted = measured + rng.choice([-1.0, 1.0], size=(8, 8)) * rng.uniform(0.1, 0.5, size=(8, 8))
        _, grad = l1_loss(predicted, measured)
        indices = list(np.ndindex(8, 8))
        numeric = central_difference(lambda x: l1_loss(x, measured)[0], predicted, indices)
        np.testing.assert_allclose([grad[i] for i in indices], numeric, rtol=1e-4)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            l1_loss(np.zeros((2, 2)), np.zeros((2, 3)))


class SsimTests(SimpleTestCase):

    def test_identical_images(self):
        image = np.random.default_rng(2).random((24, 30))
        self.assertAlmostEqual(ssim(image, image).value, 1.0, places=12)

    def test_constant_images_closed_form(self):
        config = SsimConfig(data_range=1.0)
        result = ssim(np.zeros((16, 16)), np.ones((16, 16)), config)
        self.assertAlmostEqual(result.value, config.c1 / (1.0 + config.c1), delta=1e-9)

    def test_matches_brute_force_windows(self):
        rng = np.random.default_rng(3)
        a, b = rng.random((2, 32, 32))
        config = SsimConfig(data_range=1.0)
        self.assertAlmostEqual(ssim(a, b, config).value, brute_force_ssim(a, b, config), delta=1e-8)

    def test_value_is_symmetric(self):
        rng = np.random.default_rng(4)
        a, b = rng.random((2, 20, 20))
        self.assertAlmostEqual(ssim(a, b).value, ssim(b, a).value, places=12)

    def test_value_in_unit_interval_for_nonnegative_inputs(self):
        rng = np.random.default_rng(5)
        value = ssim(rng.random((16, 16)), rng.random((16, 16))).value
        self.assertGreater(value, 0.0)
        self.assertLessEqual(value, 1.0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        a, b = rng.random((2, 32, 32))
        config = SsimConfig(data_range=1.0)
        grad = ssim(a, b, config).grad
        indices = [(0, 0), (0, 31), (31, 0), (31, 31), (2, 3), (5, 29)] + [
            tuple(index) for index in rng.integers(0, 32, size=(30, 2))
        ]
        numeric = central_difference(lambda x: ssim(x, b, config).value, a, indices)
        np.testing.assert_allclose([grad[i] for i in indices], numeric, rtol=1e-3, atol=1e-9)

    def test_small_images_use_global_statistics(self):
        rng = np.random.default_rng(7)
        a, b = rng.random((2, 6, 9))
        result = ssim(a, b)
        self.assertTrue(np.all(result.ssim_map == result.value))
        indices = list(np.ndindex(6, 9))
        numeric = central_difference(lambda x: ssim(x, b).value, a, indices)
        np.testing.assert_allclose([result.grad[i] for i in indices], numeric, rtol=1e-4, atol=1e-10)

    def test_rejects_nonpositive_range(self):
        with self.assertRaises(ValidationError):
            SsimConfig(data_range=0.0)

    def test_window_matches_reflect_padded_sliding_sum(self):
        rng = np.random.default_rng(8)
        image = rng.random((19, 23))
        taps = SsimConfig().taps()
        padded = np.pad(image, 5, mode='reflect')
        expected = np.array([
            [np.sum(np.outer(taps, taps) * padded[i:i + 11, j:j + 11]) for j in range(23)] for i in range(19)
        ])
        np.testing.assert_allclose(_window(image, taps), expected, atol=1e-12)

    def test_window_adjoint_dot_product(self):
        rng = np.random.default_rng(9)
        taps = SsimConfig().taps()
        for shape in ((11, 11), (16, 40), (60, 182)):
            x, y = rng.normal(size=(2,) + shape)
            lhs = np.vdot(_window(x, taps), y)
            rhs = np.vdot(x, _window_adjoint(y, taps))
            self.assertAlmostEqual(lhs, rhs, delta=1e-10 * np.linalg.norm(x) * np.linalg.norm(y))


class TotalVariationTests(SimpleTestCase):

    def test_constant_volume(self):
        value, grad = tv(np.full((2, 5, 5), 3.0))
        self.assertEqual(value, 0.0)
        self.assertFalse(np.any(grad))

    def test_hand_computed_grid(self):
        value, _ = tv(np.array([[[0.0, 1.0], [0.0, 1.0]]]))
        self.assertAlmostEqual(value, 1.0)

    def test_matches_double_loop(self):
        image = np.random.default_rng(8).random((8, 8))
        expected = (
            sum(abs(image[i, j + 1] - image[i, j]) for i in range(8) for j in range(7)) / 56
            + sum(abs(image[i + 1, j] - image[i, j]) for i in range(7) for j in range(8)) / 56
        )
        value, grad = tv(image[None])
        self.assertAlmostEqual(value, expected, delta=1e-10)
        indices = [(0,) + index for index in np.ndindex(8, 8)]
        numeric = central_difference(lambda x: tv(x)[0], image[None], indices)
        np.testing.assert_allclose([grad[i] for i in indices], numeric, rtol=1e-4, atol=1e-10)

    def test_slices_are_coupled(self):
        volume = np.zeros((2, 3, 3))
        volume[1] = 1.0
        value, _ = tv(volume)
        self.assertAlmostEqual(value, 1.0)


class CompositeLossTests(SimpleTestCase):

    def test_perfect_fit_and_flat_volume(self):
        measured = np.random.default_rng(9).random((1, 12, 14))
        breakdown = composite_loss(np.ones((1, 8, 8)), measured, measured)
        self.assertAlmostEqual(breakdown.total, 0.0, places=12)

    def test_perfect_fit_leaves_only_tv(self):
        rng = np.random.default_rng(10)
        measured = rng.random((1, 12, 14))
        volume = rng.random((1, 8, 8))
        weights = LossWeights()
        breakdown = composite_loss(volume, measured, measured, weights)
        self.assertAlmostEqual(breakdown.total, weights.tv * tv(volume)[0], places=12)

    def test_doubling_tv_weight_doubles_its_contribution(self):
        rng = np.random.default_rng(11)
        volume, predicted, measured = rng.random((1, 8, 8)), rng.random((1, 12, 14)), rng.random((1, 12, 14))
        base = composite_loss(volume, predicted, measured, LossWeights(l1=0.4, ssim=0.1, tv=0.5))
        doubled = composite_loss(volume, predicted, measured, LossWeights(l1=0.4, ssim=0.1, tv=1.0))
        self.assertAlmostEqual(doubled.total - base.total, 0.5 * base.tv, places=12)
        self.assertGreaterEqual(base.total, 0.0)

    def test_rejects_negative_weights(self):
        with self.assertRaises(ValidationError):
            LossWeights(l1=-0.1)

    def test_gradient_through_projector_and_rasterizer(self):
        rng = np.random.default_rng(12)
        dims = (16, 16)
        cloud = GaussianCloud(
            means=rng.integers(4, 12, size=(5, 2)) + rng.uniform(0.1, 0.9, size=(5, 2)),
            log_scales=np.log(rng.uniform(0.8, 1.6, size=(5, 2))),
            rotations=rng.uniform(-np.pi, np.pi, size=(5, 1)),
            intensities=rng.uniform(0.5, 1.5, size=5),
        )
        geometry = make_geometry(12, dims)
        spec = neighborhood_for(cloud, dims)
        clean = forward_array(rasterize(cloud, dims, neighborhood=spec).data, geometry)
        measured = clean + rng.choice([-1.0, 1.0], size=clean.shape) * rng.uniform(0.2, 0.5, size=clean.shape)
        weights = LossWeights()

        def loss_of(candidate):
            volume = rasterize(candidate, dims, neighborhood=spec).data
            return composite_loss(volume, forward_array(volume, geometry), measured, weights).total

        volume = rasterize(cloud, dims, neighborhood=spec).data
        breakdown = composite_loss(volume, forward_array(volume, geometry), measured, weights)
        upstream = breakdown.grad_volume + adjoint_array(breakdown.grad_predicted, geometry)
        analytic = rasterize_vjp(cloud, upstream, neighborhood=spec).as_dict()

        eps = 1e-6
        for group, grad in analytic.items():
            numeric = np.zeros_like(grad)
            for index in np.ndindex(grad.shape):
                bumped, dipped = cloud.copy(), cloud.copy()
                getattr(bumped, group)[index] += eps
                getattr(dipped, group)[index] -= eps
                numeric[index] = (loss_of(bumped) - loss_of(dipped)) / (2.0 * eps)
            np.testing.assert_allclose(
                grad, numeric, rtol=1e-3, atol=1e-6 * max(1.0, np.abs(numeric).max()), err_msg=group,
            )


class MetricTests(SimpleTestCase):

    def test_psnr_identical_is_infinite(self):
        image = np.random.default_rng(13).random((1, 8, 8))
        self.assertEqual(psnr(image, image), math.inf)

    def test_psnr_constant_offset(self):
        reference = np.linspace(0.0, 1.0, 64).reshape(1, 8, 8)
        self.assertAlmostEqual(psnr(reference + 0.1, reference), 20.0, delta=1e-3)
        self.assertAlmostEqual(psnr(reference + 1.0, reference), 0.0, delta=1e-9)

    def test_psnr_shape_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            psnr(np.zeros((1, 4, 4)), np.zeros((1, 4, 5)))

    def test_ssim_metric_identical(self):
        image = np.random.default_rng(14).random((2, 16, 16))
        self.assertAlmostEqual(ssim_metric(image, image), 1.0, places=12)
