import math
import time

import numpy as np
import pytest
from django.test import SimpleTestCase

from apps.core.exceptions import ShapeMismatchError
from apps.core.geometry import make_geometry
from apps.core.grids import Sinogram, VolumeGrid

from .fbp import fbp
from .filters import HANN, build_ramp_filter, fft_length, filter_rows, ram_lak_taps, ramp_filter
from .operators import RadonOperator, forward_array, get_operator, radon_adjoint, radon_forward


def gaussian_blob(size, sigma):
    center = (size - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(size), np.arange(size), indexing='ij')
    return np.exp(-((rows - center) ** 2 + (cols - center) ** 2) / (2.0 * sigma ** 2))


def disk(size, radius):
    center = (size - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(size), np.arange(size), indexing='ij')
    return (((rows - center) ** 2 + (cols - center) ** 2) <= radius ** 2).astype(np.float64)


class ForwardProjectionTests(SimpleTestCase):

    def test_zero_volume_projects_to_zero(self):
        geometry = make_geometry(12, (16, 16))
        sinogram = radon_forward(VolumeGrid.zeros((1, 16, 16)), geometry)
        self.assertEqual(sinogram.dims, (1, 12, geometry.detectors))
        self.assertFalse(np.any(sinogram.data))

    def test_centered_disk_chord_length(self):
        geometry = make_geometry(1, (64, 64))
        sinogram = radon_forward(VolumeGrid.from_slice(disk(64, 16)), geometry)
        central = sinogram.data[0, 0, geometry.detectors // 2]
        self.assertAlmostEqual(central, 32.0, delta=0.02 * 32.0)

    def test_mass_preserved_in_every_view(self):
        blob = gaussian_blob(64, 6.0)
        geometry = make_geometry(16, (64, 64))
        sinogram = radon_forward(VolumeGrid.from_slice(blob), geometry)
        np.testing.assert_allclose(sinogram.data[0].sum(axis=1), blob.sum(), rtol=1e-2)

    def test_symmetric_object_has_matching_views(self):
        geometry = make_geometry(8, (64, 64))
        sinogram = radon_forward(VolumeGrid.from_slice(gaussian_blob(64, 6.0)), geometry).data[0]
        spread = np.abs(sinogram - sinogram[0]).max()
        self.assertLess(spread, 1e-2 * sinogram.max())

    def test_linearity(self):
        rng = np.random.default_rng(0)
        geometry = make_geometry(10, (20, 20))
        first, second = rng.random((2, 1, 20, 20))
        combined = forward_array(2.5 * first - 0.75 * second, geometry)
        expected = 2.5 * forward_array(first, geometry) - 0.75 * forward_array(second, geometry)
        np.testing.assert_allclose(combined, expected, rtol=1e-10, atol=1e-10)

    def test_slices_project_independently(self):
        rng = np.random.default_rng(1)
        geometry = make_geometry(6, (12, 12))
        volume = rng.random((3, 12, 12))
        stacked = forward_array(volume, geometry)
        for index in range(3):
            np.testing.assert_allclose(stacked[index], forward_array(volume[index:index + 1], geometry)[0])

    def test_worker_count_does_not_change_result(self):
        rng = np.random.default_rng(2)
        geometry = make_geometry(40, (24, 24))
        volume = rng.random((1, 24, 24))
        operator = RadonOperator(geometry, view_chunk=3)
        serial = operator.forward(volume, workers=1)
        threaded = operator.forward(volume, workers=4)
        np.testing.assert_array_equal(serial, threaded)
        sino = rng.random((1, 40, geometry.detectors))
        np.testing.assert_array_equal(operator.adjoint(sino, workers=1), operator.adjoint(sino, workers=4))

    def test_uncached_operator_matches_cached(self):
        geometry = make_geometry(9, (16, 16))
        volume = np.random.default_rng(3).random((1, 16, 16))
        cached = RadonOperator(geometry, cache_mb=10 ** 6).forward(volume)
        uncached = RadonOperator(geometry, cache_mb=0).forward(volume)
        np.testing.assert_array_equal(cached, uncached)

    def test_blocks_hold_one_entry_per_ray_and_voxel(self):
        geometry = make_geometry(6, (16, 16))
        block = RadonOperator(geometry).block(0)
        self.assertTrue(block.has_canonical_format)
        for row in range(block.shape[0]):
            columns = block.indices[block.indptr[row]:block.indptr[row + 1]]
            self.assertEqual(np.unique(columns).size, columns.size)

    def test_operator_is_reused_for_same_geometry(self):
        geometry = make_geometry(5, (8, 8))
        self.assertIs(get_operator(geometry), get_operator(make_geometry(5, (8, 8))))

    def test_shape_mismatch(self):
        geometry = make_geometry(5, (8, 8))
        with self.assertRaises(ShapeMismatchError):
            radon_forward(VolumeGrid.zeros((1, 9, 8)), geometry)
        with self.assertRaises(ShapeMismatchError):
            radon_adjoint(Sinogram.zeros(1, 4, geometry.detectors), geometry)


class AdjointTests(SimpleTestCase):

    def test_dot_product_identity(self):
        rng = np.random.default_rng(42)
        geometry = make_geometry(30, (32, 32))
        volumes = rng.normal(size=(100, 32, 32))
        sinograms = rng.normal(size=(100, 30, geometry.detectors))
        projected = forward_array(volumes, geometry)
        backprojected = get_operator(geometry).adjoint(sinograms)
        lhs = np.einsum('cvd,cvd->c', projected, sinograms)
        rhs = np.einsum('chw,chw->c', volumes, backprojected)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-10 * np.abs(lhs).max())

    def test_single_bin_backprojects_along_its_ray(self):
        geometry = make_geometry(4, (32, 32))
        data = np.zeros((1, 4, geometry.detectors))
        view, detector = 1, 20
        data[0, view, detector] = 1.0
        image = radon_adjoint(Sinogram(data), geometry).data[0]

        theta = geometry.angles[view]
        offset = geometry.detector_positions()[detector]
        rows, cols = np.nonzero(image)
        x, y = geometry.grid_to_world(rows, cols)
        distance = np.abs(x * math.cos(theta) + y * math.sin(theta) - offset)
        self.assertGreater(rows.size, 0)
        self.assertTrue(np.all(distance < 1.5))
        self.assertTrue(np.all(image >= 0.0))


class RampFilterTests(SimpleTestCase):

    def test_kernel_values(self):
        taps = ram_lak_taps([0, 1, -1, 2, 3, 4])
        np.testing.assert_allclose(
            taps, [0.25, -1 / math.pi ** 2, -1 / math.pi ** 2, 0.0, -1 / (9 * math.pi ** 2), 0.0]
        )

    def test_fft_length_is_padded_power_of_two(self):
        self.assertEqual(fft_length(32), 64)
        self.assertEqual(fft_length(33), 128)
        self.assertEqual(fft_length(182), 512)

    def test_response_is_real_and_symmetric(self):
        ramp = build_ramp_filter(100)
        np.testing.assert_allclose(ramp.response[1:], ramp.response[1:][::-1], atol=1e-12)
        self.assertGreater(ramp.response[ramp.length // 2], ramp.response[1])

    def test_hann_window_vanishes_at_nyquist(self):
        ramp = build_ramp_filter(64, HANN)
        self.assertAlmostEqual(ramp.response[ramp.length // 2], 0.0, places=12)

    def test_unknown_window(self):
        with self.assertRaises(ValueError):
            build_ramp_filter(16, 'shepp')

    def test_fft_matches_direct_convolution(self):
        row = np.random.default_rng(7).normal(size=32)
        index = np.arange(32)
        direct = ram_lak_taps(index[:, None] - index[None, :]) @ row
        np.testing.assert_allclose(filter_rows(row[None, :])[0], direct, atol=1e-10)

    def test_constant_row_filters_to_near_zero_inside(self):
        filtered = filter_rows(np.ones((1, 256)))[0]
        self.assertLess(np.abs(filtered[64:192]).max(), 5e-3)

    def test_needs_two_detectors(self):
        with self.assertRaises(ShapeMismatchError):
            ramp_filter(Sinogram.zeros(1, 3, 1))


class FilteredBackProjectionTests(SimpleTestCase):

    def test_zero_sinogram(self):
        geometry = make_geometry(20, (16, 16))
        volume = fbp(Sinogram.zeros(1, 20, geometry.detectors), geometry)
        self.assertEqual(volume.dims, (1, 16, 16))
        self.assertFalse(np.any(volume.data))

    def test_recovers_smooth_blob(self):
        blob = gaussian_blob(64, 6.0)
        geometry = make_geometry(180, (64, 64))
        sinogram = radon_forward(VolumeGrid.from_slice(blob), geometry)
        recon = fbp(sinogram, geometry).data[0]
        self.assertLess(np.abs(recon - blob).max(), 0.06)
        self.assertTrue(np.all(recon >= 0.0))


@pytest.mark.slow
class FilteredBackProjectionQualityTests(SimpleTestCase):

    def test_dense_views_reach_quality_floor(self):
        from apps.datasets.phantoms import shepp_logan
        from apps.objective.metrics import psnr

        truth = shepp_logan(256, supersample=4)
        geometry = make_geometry(720, (256, 256))
        sinogram = radon_forward(truth, geometry)
        started = time.perf_counter()
        recon = fbp(sinogram, geometry)
        elapsed = time.perf_counter() - started
        value = psnr(recon, truth)
        self.assertGreaterEqual(value, 30.0, f"fbp at 720 views: {value:.2f} dB")
        self.assertLess(elapsed, 30.0)

    def test_sparse_views_lose_quality(self):
        from apps.datasets.phantoms import shepp_logan
        from apps.objective.metrics import psnr

        truth = shepp_logan(128)
        dense = make_geometry(720, (128, 128))
        sparse_views = make_geometry(60, (128, 128))
        dense_psnr = psnr(fbp(radon_forward(truth, dense), dense), truth)
        sparse_psnr = psnr(fbp(radon_forward(truth, sparse_views), sparse_views), truth)
        self.assertLess(sparse_psnr, dense_psnr)
