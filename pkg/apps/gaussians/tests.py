import numpy as np
from django.test import SimpleTestCase, override_settings
from hypothesis import given, settings
from hypothesis import strategies as st

from apps.core.exceptions import ShapeMismatchError

from .cloud import GaussianCloud
from .neighborhood import box_offsets, median_std, neighborhood_for, neighborhood_offsets
from .precision import precision_from_params
from .rasterizer import (
    mahalanobis_sq, mahalanobis_sq_direct, rasterize, rasterize_dense_oracle, rasterize_vjp,
)


def random_cloud(rng, count, dims, sigma_range=(0.6, 2.0), margin=2.0):
    """Gaussians well inside ``dims`` with sub-voxel shifts kept off the voxel edges."""
    dim = len(dims)
    base = np.stack([rng.integers(int(margin), size - int(margin), size=count) for size in dims], axis=1)
    means = base + rng.uniform(0.1, 0.9, size=(count, dim))
    log_scales = np.log(rng.uniform(*sigma_range, size=(count, dim)))
    if dim == 2:
        rotations = rng.uniform(-np.pi, np.pi, size=(count, 1))
    else:
        rotations = rng.normal(size=(count, 4))
    intensities = rng.uniform(0.2, 1.5, size=count)
    return GaussianCloud(means=means, log_scales=log_scales, rotations=rotations, intensities=intensities)


class GaussianCloudTests(SimpleTestCase):

    def test_shapes_validated(self):
        with self.assertRaises(ShapeMismatchError):
            GaussianCloud(means=np.zeros((2, 2)), log_scales=np.zeros((2, 3)),
                          rotations=np.zeros((2, 1)), intensities=np.ones(2))
        with self.assertRaises(ShapeMismatchError):
            GaussianCloud(means=np.zeros((2, 3)), log_scales=np.zeros((2, 3)),
                          rotations=np.zeros((2, 1)), intensities=np.ones(2))

    def test_rejects_non_finite(self):
        with self.assertRaises(ValueError):
            GaussianCloud.isotropic([[1.0, np.inf]], 1.0, 1.0)

    def test_quaternions_normalized(self):
        cloud = GaussianCloud(means=np.zeros((1, 3)), log_scales=np.zeros((1, 3)),
                              rotations=[[2.0, 0.0, 0.0, 0.0]], intensities=[1.0])
        np.testing.assert_allclose(cloud.rotations, [[1.0, 0.0, 0.0, 0.0]])

    def test_copy_is_independent(self):
        cloud = GaussianCloud.isotropic([[1.0, 2.0]], 1.0, 1.0)
        clone = cloud.copy()
        clone.means[0, 0] = 5.0
        self.assertEqual(cloud.means[0, 0], 1.0)


class PrecisionTests(SimpleTestCase):

    def test_axis_aligned_precision(self):
        precision = precision_from_params(np.log([[2.0, 0.5]]), [[0.0]])
        np.testing.assert_allclose(precision.matrices[0], np.diag([0.25, 4.0]))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2 ** 16), dim=st.sampled_from([2, 3]))
    def test_symmetric_positive_definite(self, seed, dim):
        cloud = random_cloud(np.random.default_rng(seed), 8, (16,) * dim, sigma_range=(0.05, 20.0))
        precision = precision_from_params(cloud.log_scales, cloud.rotations)
        np.testing.assert_array_equal(precision.matrices, np.swapaxes(precision.matrices, 1, 2))
        self.assertTrue(np.all(np.linalg.eigvalsh(precision.matrices) > 0.0))
        self.assertTrue(precision.positive_definite)

    def test_rotation_matrices_are_orthonormal(self):
        cloud = random_cloud(np.random.default_rng(5), 10, (12, 12, 12))
        rot = precision_from_params(cloud.log_scales, cloud.rotations).rotations
        np.testing.assert_allclose(np.einsum('nij,nkj->nik', rot, rot), np.broadcast_to(np.eye(3), rot.shape),
                                   atol=1e-12)


class NeighborhoodTests(SimpleTestCase):

    def test_unit_sigma_gives_radius_three(self):
        spec = neighborhood_for(GaussianCloud.isotropic([[4.0, 4.0]], 1.0, 1.0), (32, 32))
        self.assertEqual(spec.radii, (3, 3))
        self.assertEqual(spec.size, 49)

    def test_radius_clamped_to_grid(self):
        self.assertEqual(neighborhood_offsets([10.0, 0.01], (8, 8)).radii, (8, 1))

    def test_even_count_median_averages_middle_pair(self):
        cloud = GaussianCloud(
            means=np.zeros((4, 2)), log_scales=np.log([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [10.0, 10.0]]),
            rotations=np.zeros((4, 1)), intensities=np.ones(4),
        )
        np.testing.assert_allclose(median_std(cloud), [2.5, 2.5])

    def test_offsets_are_lexicographic(self):
        offsets = box_offsets((1, 1))
        self.assertEqual(offsets[0].tolist(), [-1, -1])
        self.assertEqual(offsets[1].tolist(), [-1, 0])
        self.assertEqual(offsets[-1].tolist(), [1, 1])

    @settings(max_examples=1000, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1), dim=st.sampled_from([2, 3]), radius=st.integers(1, 4))
    def test_expanded_distance_matches_direct(self, seed, dim, radius):
        rng = np.random.default_rng(seed)
        cloud = random_cloud(rng, 20, (20,) * dim)
        precision = precision_from_params(cloud.log_scales, cloud.rotations).matrices
        offsets = box_offsets((radius,) * dim)
        frac = cloud.means - np.floor(cloud.means)
        expanded = mahalanobis_sq(offsets, frac, precision)
        direct = mahalanobis_sq_direct(offsets, frac, precision)
        self.assertLessEqual(np.abs(expanded - direct).max(), 1e-10)

    def test_distance_shape_checks(self):
        with self.assertRaises(ShapeMismatchError):
            mahalanobis_sq(np.zeros((4, 2)), np.zeros((3, 3)), np.zeros((3, 3, 3)))


class RasterizeTests(SimpleTestCase):

    def test_peak_at_integer_center(self):
        cloud = GaussianCloud.isotropic([[8.0, 8.0]], 1.5, 2.0)
        volume = rasterize(cloud, (16, 16))
        self.assertEqual(volume.dims, (1, 16, 16))
        self.assertEqual(volume.data[0, 8, 8], 2.0)
        self.assertAlmostEqual(volume.total_mass(), 2.0 * 2 * np.pi * 1.5 ** 2, delta=0.1)

    def test_matches_masked_dense_evaluation(self):
        rng = np.random.default_rng(21)
        for dims in ((24, 24), (10, 12, 14)):
            for sigma in (0.5, 1.3, 3.0):
                cloud = random_cloud(rng, 30, dims, sigma_range=(sigma, sigma))
                spec = neighborhood_for(cloud, dims)
                fast = rasterize(cloud, dims, neighborhood=spec)
                oracle = rasterize_dense_oracle(cloud, dims, neighborhood=spec)
                np.testing.assert_allclose(fast.data, oracle.data, rtol=0, atol=1e-12)

    def test_truncation_error_bounded(self):
        cloud = GaussianCloud.isotropic([[12.3, 11.6]], 1.7, 1.0)
        truncated = rasterize(cloud, (24, 24)).data
        full = rasterize_dense_oracle(cloud, (24, 24)).data
        self.assertLessEqual(np.abs(truncated - full).max(), np.exp(-4.5) + 1e-12)

    def test_gaussians_near_border_are_clipped(self):
        cloud = GaussianCloud.isotropic([[0.2, 15.5], [-1.5, 3.0]], 1.0, 1.0)
        volume = rasterize(cloud, (16, 16))
        self.assertTrue(np.all(volume.data >= 0.0))
        self.assertGreater(volume.data[0, 0, 15], 0.0)

    def test_two_dimensional_cloud_rejects_multi_slice(self):
        with self.assertRaises(ShapeMismatchError):
            rasterize(GaussianCloud.isotropic([[1.0, 1.0]], 1.0, 1.0), (2, 8, 8))

    @override_settings(GAUSSIAN_CHUNK=7)
    def test_worker_count_does_not_change_result(self):
        for dims in ((32, 32), (8, 16, 16)):
            cloud = random_cloud(np.random.default_rng(8), 60, dims)
            serial = rasterize(cloud, dims, workers=1).data
            for workers in (2, 8):
                np.testing.assert_array_equal(rasterize(cloud, dims, workers=workers).data, serial)

    def test_confined_close_to_unconfined_on_random_clouds(self):
        rng = np.random.default_rng(33)
        for _ in range(20):
            sigma = rng.uniform(0.5, 3.0)
            cloud = random_cloud(rng, 10, (32, 32), sigma_range=(sigma, sigma), margin=np.ceil(3 * sigma) + 1)
            spec = neighborhood_for(cloud, (32, 32))
            confined = rasterize(cloud, (32, 32), neighborhood=spec).data
            np.testing.assert_allclose(
                confined, rasterize_dense_oracle(cloud, (32, 32), neighborhood=spec).data, rtol=0, atol=1e-12,
            )
            dense = rasterize_dense_oracle(cloud, (32, 32)).data
            self.assertLessEqual(np.abs(confined - dense).sum() / np.abs(dense).sum(), 0.01, f"sigma={sigma:.3f}")

    def test_mass_capture_of_interior_isotropic_gaussians(self):
        rng = np.random.default_rng(34)
        for dims, bound in (((40, 40), 0.01), ((24, 24, 24), 0.016)):
            for sigma in (0.5, 0.7, 1.0, 1.33, 1.66, 2.0, 2.3, 2.66, 3.0):
                cloud = random_cloud(rng, 6, dims, sigma_range=(sigma, sigma), margin=np.ceil(3 * sigma) + 1)
                confined = rasterize(cloud, dims).total_mass()
                dense = rasterize_dense_oracle(cloud, dims).total_mass()
                self.assertLessEqual(abs(confined - dense) / dense, bound, f"{len(dims)}D sigma={sigma}")

    def test_integer_shift_moves_volume_exactly(self):
        rng = np.random.default_rng(35)
        means = rng.integers(8, 20, size=(25, 2)) + rng.integers(1, 1023, size=(25, 2)) / 1024.0
        cloud = GaussianCloud(
            means=means,
            log_scales=np.log(rng.uniform(0.6, 1.4, size=(25, 2))),
            rotations=rng.uniform(-np.pi, np.pi, size=(25, 1)),
            intensities=rng.uniform(0.2, 1.5, size=25),
        )
        shifted = cloud.copy()
        shifted.means += np.array([3.0, -2.0])
        base = rasterize(cloud, (32, 32)).data[0]
        moved = rasterize(shifted, (32, 32)).data[0]
        np.testing.assert_array_equal(moved[3:, :-2], base[:-3, 2:])
        self.assertFalse(np.any(moved[:3]))
        self.assertFalse(np.any(moved[:, -2:]))

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2 ** 16), scale=st.floats(0.1, 10.0))
    def test_linear_in_intensities(self, seed, scale):
        cloud = random_cloud(np.random.default_rng(seed), 12, (20, 20))
        scaled = cloud.copy()
        scaled.intensities *= scale
        spec = neighborhood_for(cloud, (20, 20))
        np.testing.assert_allclose(
            rasterize(scaled, (20, 20), neighborhood=spec).data,
            scale * rasterize(cloud, (20, 20), neighborhood=spec).data,
            rtol=1e-12, atol=1e-12,
        )


class RasterizeGradientTests(SimpleTestCase):

    def finite_difference(self, cloud, dims, spec, upstream, group, eps=1e-6):
        grad = np.zeros_like(getattr(cloud, group))
        for index in np.ndindex(grad.shape):
            values = []
            for sign in (1.0, -1.0):
                shifted = cloud.copy()
                getattr(shifted, group)[index] += sign * eps
                values.append(np.sum(upstream * rasterize(shifted, dims, neighborhood=spec).data))
            grad[index] = (values[0] - values[1]) / (2.0 * eps)
        return grad

    def check_gradients(self, dims, seed):
        rng = np.random.default_rng(seed)
        cloud = random_cloud(rng, 3, dims)
        volume_dims = (1,) + tuple(dims) if cloud.dim == 2 else tuple(dims)
        spec = neighborhood_for(cloud, dims)
        upstream = rng.normal(size=volume_dims)
        analytic = rasterize_vjp(cloud, upstream, neighborhood=spec).as_dict()
        for group, value in analytic.items():
            numeric = self.finite_difference(cloud, dims, spec, upstream, group)
            np.testing.assert_allclose(
                value, numeric, rtol=1e-4, atol=1e-6 * max(1.0, np.abs(numeric).max()), err_msg=group,
            )

    def test_gradients_2d(self):
        self.check_gradients((16, 16), seed=4)

    def test_gradients_3d(self):
        self.check_gradients((10, 10, 10), seed=9)

    def test_intensity_gradient_at_own_center_is_one(self):
        cloud = GaussianCloud.isotropic([[5.0, 6.0]], 1.0, 3.0)
        upstream = np.zeros((1, 12, 12))
        upstream[0, 5, 6] = 1.0
        grads = rasterize_vjp(cloud, upstream)
        self.assertEqual(grads.intensities[0], 1.0)

    def test_upstream_shape_checked(self):
        cloud = GaussianCloud.isotropic([[5.0, 6.0]], 1.0, 1.0)
        with self.assertRaises(ShapeMismatchError):
            rasterize_vjp(cloud, np.zeros((2, 12, 12)))
