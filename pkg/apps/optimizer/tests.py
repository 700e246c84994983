import math
from unittest import mock

import numpy as np
import pytest
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from apps.core.exceptions import DivergenceError
from apps.core.geometry import make_geometry
from apps.core.grids import Sinogram, VolumeGrid
from apps.gaussians.cloud import GaussianCloud
from apps.gaussians.rasterizer import rasterize
from apps.objective.losses import LossWeights, composite_loss, tv
from apps.projector.fbp import fbp
from apps.projector.operators import radon_forward

from .adam import OptimState, adam_step
from .config import MAX_GAUSSIANS, ReconConfig
from .initialization import init_cloud
from .reconstruction import TraceRow, reconstruct, smoothed_losses


def single_gaussian_problem(intensity=1.0, views=12, size=16):
    cloud = GaussianCloud.isotropic([[8.4, 7.6]], 1.5, intensity)
    geometry = make_geometry(views, (size, size))
    sinogram = radon_forward(rasterize(cloud, (size, size)), geometry)
    return cloud, geometry, sinogram


class ReconConfigTests(SimpleTestCase):

    def test_defaults(self):
        config = ReconConfig()
        self.assertEqual(config.lr, 3e-4)
        self.assertEqual(config.max_iters, 2000)
        self.assertEqual(config.weights, LossWeights(l1=0.4, ssim=0.1, tv=0.5))
        config.clean()

    def test_gaussian_count_scales_with_grid(self):
        config = ReconConfig()
        self.assertEqual(config.resolve_count(128 * 128), 128 * 128)
        self.assertEqual(config.resolve_count(3), 3)
        self.assertEqual(config.resolve_count(10 ** 7), MAX_GAUSSIANS)
        self.assertEqual(ReconConfig(gaussian_count=7).resolve_count(10 ** 6), 7)

    def test_invalid_values_reported_per_field(self):
        with self.assertRaises(ValidationError) as ctx:
            ReconConfig(lr=0.0, max_iters=0, trainable={'colors'}).clean()
        self.assertEqual(set(ctx.exception.message_dict), {'lr', 'max_iters', 'trainable'})


class AdamTests(SimpleTestCase):

    def test_zero_gradient_leaves_parameters(self):
        params = {'x': np.array([1.0, -2.0])}
        state = OptimState.for_parameters(params)
        adam_step(state, params, {'x': np.zeros(2)}, lr=0.1)
        np.testing.assert_array_equal(params['x'], [1.0, -2.0])

    def test_first_step_moves_by_learning_rate(self):
        params = {'x': np.zeros(3)}
        state = OptimState.for_parameters(params)
        adam_step(state, params, {'x': np.array([5.0, -0.01, 300.0])}, lr=0.01)
        np.testing.assert_allclose(params['x'], [-0.01, 0.01, -0.01], rtol=1e-5)
        self.assertEqual(state.step, 1)

    def test_two_steps_match_reference(self):
        params = {'x': np.array([0.0])}
        state = OptimState.for_parameters(params)
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        expected, m, v = 0.0, 0.0, 0.0
        for t in (1, 2):
            m = b1 * m + (1 - b1) * 1.0
            v = b2 * v + (1 - b2) * 1.0
            expected -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
            adam_step(state, params, {'x': np.array([1.0])}, lr)
        self.assertAlmostEqual(params['x'][0], expected, delta=1e-12)

    def test_non_finite_gradient_raises_with_iteration(self):
        params = {'x': np.zeros(2)}
        state = OptimState.for_parameters(params)
        with self.assertRaises(DivergenceError) as ctx:
            adam_step(state, params, {'x': np.array([np.nan, 1.0])}, lr=0.1, iteration=17)
        self.assertEqual(ctx.exception.iteration, 17)
        np.testing.assert_array_equal(params['x'], [0.0, 0.0])

    def test_quaternions_renormalized(self):
        cloud = GaussianCloud.isotropic([[2.0, 2.0, 2.0]], 1.0, 1.0)
        state = OptimState.for_parameters(cloud.parameters())
        adam_step(state, cloud, {'rotations': np.array([[0.0, -1.0, 0.5, 0.0]])}, lr=0.2)
        self.assertAlmostEqual(float(np.linalg.norm(cloud.rotations[0])), 1.0, places=12)


class InitCloudTests(SimpleTestCase):

    def setUp(self):
        self.geometry = make_geometry(30, (32, 32))
        blob = np.zeros((1, 32, 32))
        blob[0, 10:22, 8:24] = 1.0
        self.sinogram = radon_forward(VolumeGrid(blob), self.geometry)

    def test_count_and_bounds(self):
        cloud = init_cloud(self.sinogram, self.geometry, ReconConfig(gaussian_count=100))
        self.assertEqual(cloud.count, 100)
        self.assertEqual(cloud.dim, 2)
        self.assertTrue(np.all(cloud.means >= 0.0))
        self.assertTrue(np.all(cloud.means < 32.0))
        self.assertTrue(np.all(cloud.intensities >= 0.0))

    def test_seeded_initialization_is_reproducible(self):
        config = ReconConfig(gaussian_count=150, seed=99)
        first = init_cloud(self.sinogram, self.geometry, config)
        second = init_cloud(self.sinogram, self.geometry, config)
        for name, values in first.parameters().items():
            np.testing.assert_array_equal(values, getattr(second, name))

    def test_mass_matches_fbp(self):
        config = ReconConfig(gaussian_count=256)
        cloud = init_cloud(self.sinogram, self.geometry, config)
        target = fbp(self.sinogram, self.geometry).total_mass()
        self.assertAlmostEqual(rasterize(cloud, (32, 32)).total_mass(), target, delta=0.05 * target)

    def test_render_tracks_fbp_at_one_gaussian_per_voxel(self):
        cloud = init_cloud(self.sinogram, self.geometry, ReconConfig())
        self.assertEqual(cloud.count, 32 * 32)
        np.testing.assert_allclose(np.exp(cloud.log_scales), 0.5)
        target = fbp(self.sinogram, self.geometry).data
        rendered = rasterize(cloud, (32, 32)).data
        self.assertLess(np.abs(rendered - target).sum() / np.abs(target).sum(), 0.3)
        self.assertLess(rendered.max(), 1.3 * target.max())

    def test_zero_sinogram_gives_zero_intensities(self):
        zero = Sinogram.zeros(1, 30, self.geometry.detectors)
        cloud = init_cloud(zero, self.geometry, ReconConfig(gaussian_count=64))
        self.assertFalse(np.any(cloud.intensities))

    def test_multi_slice_uses_three_dimensional_gaussians(self):
        stacked = Sinogram(np.repeat(self.sinogram.data, 3, axis=0))
        cloud = init_cloud(stacked, self.geometry, ReconConfig(gaussian_count=90))
        self.assertEqual(cloud.dim, 3)
        self.assertTrue(np.all(cloud.means[:, 0] < 3.0))
        np.testing.assert_allclose(np.linalg.norm(cloud.rotations, axis=1), 1.0)


class ReconstructTests(SimpleTestCase):

    def test_loss_at_start_is_tv_of_consistent_cloud(self):
        cloud, geometry, sinogram = single_gaussian_problem()
        weights = LossWeights()
        result = reconstruct(sinogram, geometry, ReconConfig(max_iters=1, weights=weights), initial_cloud=cloud)
        expected = weights.tv * tv(rasterize(cloud, (16, 16)))[0]
        self.assertAlmostEqual(result.loss_trace[0].loss, expected, places=12)

    def test_trace_has_one_row_per_iteration(self):
        _, geometry, sinogram = single_gaussian_problem()
        result = reconstruct(sinogram, geometry, ReconConfig(max_iters=10, gaussian_count=16, lr=1e-2))
        self.assertEqual(len(result.loss_trace), 10)
        self.assertEqual(result.iterations, 10)
        self.assertEqual([row.iteration for row in result.loss_trace], list(range(10)))
        self.assertTrue(np.all(result.volume.data >= 0.0))
        self.assertEqual(result.best_loss, min(row.loss for row in result.loss_trace))

    def test_runs_are_deterministic(self):
        _, geometry, sinogram = single_gaussian_problem()
        config = ReconConfig(max_iters=5, gaussian_count=20, lr=1e-2, seed=3)
        first = reconstruct(sinogram, geometry, config)
        second = reconstruct(sinogram, geometry, config)
        np.testing.assert_array_equal(first.volume.data, second.volume.data)
        self.assertEqual([row.loss for row in first.loss_trace], [row.loss for row in second.loss_trace])

    def test_intensity_recovered(self):
        truth, geometry, sinogram = single_gaussian_problem(intensity=1.0)
        start = truth.copy()
        start.intensities[:] = 0.92
        config = ReconConfig(
            max_iters=500,
            weights=LossWeights(l1=0.4, ssim=0.0, tv=0.0),
            trainable={'intensities'},
        )
        result = reconstruct(sinogram, geometry, config, initial_cloud=start)
        self.assertAlmostEqual(result.cloud.intensities[0], 1.0, delta=1e-3)
        np.testing.assert_array_equal(result.cloud.means, truth.means)

    def test_snapshots_against_reference(self):
        truth, geometry, sinogram = single_gaussian_problem()
        reference = rasterize(truth, (16, 16))
        config = ReconConfig(max_iters=6, eval_every=2, gaussian_count=16)
        result = reconstruct(sinogram, geometry, config, reference=reference)
        self.assertEqual([snap.iteration for snap in result.snapshots], [0, 2, 4])
        self.assertTrue(all(snap.ssim <= 1.0 for snap in result.snapshots))

    def test_interrupt_returns_best_so_far(self):
        _, geometry, sinogram = single_gaussian_problem()

        def stop(iteration, loss, elapsed):
            raise KeyboardInterrupt

        result = reconstruct(sinogram, geometry, ReconConfig(max_iters=50, gaussian_count=16), progress=stop)
        self.assertTrue(result.interrupted)
        self.assertEqual(result.iterations, 1)
        self.assertEqual(result.volume.dims, (1, 16, 16))

    def test_divergence_carries_iteration_and_best_volume(self):
        _, geometry, sinogram = single_gaussian_problem()
        calls = []

        def flaky(*args, **kwargs):
            breakdown = composite_loss(*args, **kwargs)
            calls.append(breakdown)
            if len(calls) == 3:
                object.__setattr__(breakdown, 'total', math.nan)
            return breakdown

        with mock.patch('apps.optimizer.reconstruction.composite_loss', side_effect=flaky):
            with self.assertRaises(DivergenceError) as ctx:
                reconstruct(sinogram, geometry, ReconConfig(max_iters=10, gaussian_count=16))
        self.assertEqual(ctx.exception.iteration, 2)
        self.assertIsNotNone(ctx.exception.best_volume)
        self.assertEqual(len(ctx.exception.loss_trace), 2)

    def test_large_learning_rate_diverges_with_best_volume(self):
        _, geometry, sinogram = single_gaussian_problem()
        with self.assertRaises(DivergenceError) as ctx:
            reconstruct(sinogram, geometry, ReconConfig(max_iters=20, gaussian_count=16, lr=1e6))
        error = ctx.exception
        self.assertGreaterEqual(error.iteration, 1)
        self.assertEqual(error.best_volume.dims, (1, 16, 16))
        self.assertEqual(error.best_cloud.count, 16)
        self.assertEqual(len(error.loss_trace), error.iteration)

    def test_collapsed_scales_are_divergence(self):
        cloud, geometry, sinogram = single_gaussian_problem()
        cloud.log_scales[:] = -800.0
        with self.assertRaises(DivergenceError) as ctx:
            reconstruct(sinogram, geometry, ReconConfig(max_iters=5), initial_cloud=cloud)
        self.assertEqual(ctx.exception.iteration, 0)
        self.assertIsNone(ctx.exception.best_volume)

    def test_overflowing_render_is_divergence(self):
        _, geometry, sinogram = single_gaussian_problem()
        cloud = GaussianCloud.isotropic([[8.0, 8.0], [8.0, 8.0]], 1.0, 1e308)
        with self.assertRaises(DivergenceError) as ctx:
            reconstruct(sinogram, geometry, ReconConfig(max_iters=5), initial_cloud=cloud)
        self.assertEqual(ctx.exception.iteration, 0)

    def test_smoothed_losses(self):
        trace = [TraceRow(i, float(10 - i), 0.0, 0.0, 0.0, 0.0) for i in range(10)]
        smoothed = smoothed_losses(trace, window=4)
        self.assertEqual(smoothed.size, 7)
        self.assertTrue(np.all(np.diff(smoothed) <= 0))


@pytest.mark.slow
class ReconstructionQualityTests(SimpleTestCase):

    def test_beats_filtered_back_projection_at_sparse_views(self):
        from apps.datasets.phantoms import shepp_logan
        from apps.objective.metrics import psnr

        truth = shepp_logan(128)
        geometry = make_geometry(60, (128, 128))
        sinogram = radon_forward(truth, geometry)
        baseline = psnr(fbp(sinogram, geometry), truth)
        result = reconstruct(sinogram, geometry, ReconConfig())
        gift = psnr(result.volume, truth)
        self.assertGreaterEqual(gift, baseline + 10.0, f"gift {gift:.2f} dB vs fbp {baseline:.2f} dB")

        smoothed = smoothed_losses(result.loss_trace, window=100)
        rises = np.diff(smoothed)
        self.assertLessEqual(rises.max(), 1e-3 * smoothed[0], f"smoothed loss rose by {rises.max():.3g}")
