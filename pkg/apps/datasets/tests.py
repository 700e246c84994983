import math
import struct
import tempfile
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st

from apps.core.exceptions import (
    BadMagicError, CorruptHeaderError, DataIOError, GeometryError, TruncatedPayloadError,
    UnsupportedDtypeError, UnsupportedVersionError,
)
from apps.core.grids import Sinogram, VolumeGrid
from apps.optimizer.reconstruction import TraceRow

from .formats import encode_volume, read_sinogram, read_volume, write_sinogram, write_volume
from .images import MID_GRAY, read_pgm, write_pgm
from .metrics_csv import METRIC_COLUMNS, metrics_row, read_metrics_csv, write_metrics_csv, write_trace_csv
from .noise import NoiseModel, add_noise
from .phantoms import lesion_inserts, lesion_phantom, shepp_logan, shepp_logan_value


class TempDirMixin:

    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()
        super().tearDown()


def f32_volume(rng, dims):
    return VolumeGrid(rng.normal(size=dims).astype(np.float32))


class SheppLoganTests(SimpleTestCase):

    def test_shape_and_range(self):
        phantom = shepp_logan(64)
        self.assertEqual(phantom.dims, (1, 64, 64))
        self.assertGreaterEqual(phantom.data.min(), 0.0)
        self.assertLessEqual(phantom.data.max(), 1.02)

    def test_center_matches_ellipse_table(self):
        phantom = shepp_logan(129)
        expected = float(shepp_logan_value(0.0, 0.0))
        self.assertAlmostEqual(expected, 0.2)
        self.assertAlmostEqual(phantom.data[0, 64, 64], expected)

    def test_small_ellipses_break_mirror_symmetry(self):
        image = shepp_logan(128).data[0]
        self.assertGreater(np.abs(image - image[:, ::-1]).sum(), 0.0)

    def test_rejects_undersized_grid(self):
        with self.assertRaises(GeometryError):
            shepp_logan(8)

    def test_middle_slice_of_stack_is_two_dimensional_phantom(self):
        stacked = shepp_logan(32, slices=5)
        self.assertEqual(stacked.dims, (5, 32, 32))
        np.testing.assert_array_equal(stacked.data[2], shepp_logan(32).data[0])
        self.assertLess(stacked.data[0].sum(), stacked.data[2].sum())

    def test_supersampling_smooths_edges(self):
        hard = shepp_logan(32).data
        soft = shepp_logan(32, supersample=3).data
        self.assertGreater(np.unique(soft).size, np.unique(hard).size)


class LesionPhantomTests(SimpleTestCase):

    def test_same_seed_same_phantom(self):
        np.testing.assert_array_equal(lesion_phantom(48, 7).data, lesion_phantom(48, 7).data)
        self.assertFalse(np.array_equal(lesion_phantom(48, 7).data, lesion_phantom(48, 8).data))

    def test_inserts_within_bounds(self):
        for seed in range(10):
            for insert in lesion_inserts(64, seed):
                row, col = insert.center
                self.assertGreaterEqual(min(row, col) - insert.radius, 0.0)
                self.assertLessEqual(max(row, col) + insert.radius, 63.0)

    def test_has_high_contrast_insert(self):
        inserts = lesion_inserts(64, 3)
        self.assertEqual(inserts[0].kind, 'calcification')
        self.assertTrue(any(abs(insert.contrast) >= 0.3 for insert in inserts))


class NoiseTests(SimpleTestCase):

    def setUp(self):
        self.sinogram = Sinogram(np.random.default_rng(0).random((1, 30, 40)))

    def test_parse(self):
        self.assertEqual(NoiseModel.parse('none'), NoiseModel())
        self.assertEqual(NoiseModel.parse('gaussian:0.1'), NoiseModel('gaussian', 0.1))
        self.assertEqual(str(NoiseModel.parse('Poisson:1e4')), 'poisson:10000')
        for text in ('gaussian', 'poisson:-1', 'laplace:1', 'gaussian:abc'):
            with self.assertRaises(ValidationError):
                NoiseModel.parse(text)

    def test_none_and_zero_sigma_are_identity(self):
        for model in (NoiseModel(), NoiseModel('gaussian', 0.0)):
            np.testing.assert_array_equal(add_noise(self.sinogram, model, seed=1).data, self.sinogram.data)

    def test_gaussian_statistics(self):
        zero = Sinogram.zeros(1, 400, 400)
        noisy = add_noise(zero, NoiseModel('gaussian', 0.1), seed=5).data
        self.assertLessEqual(abs(noisy.mean()), 0.01)
        self.assertTrue(0.095 <= noisy.std() <= 0.105)

    def test_seeded_noise_is_reproducible(self):
        model = NoiseModel('poisson', 1e4)
        first = add_noise(self.sinogram, model, seed=9).data
        np.testing.assert_array_equal(first, add_noise(self.sinogram, model, seed=9).data)
        self.assertLess(np.abs(first - self.sinogram.data).mean(), 0.05)


class VolumeFormatTests(TempDirMixin, SimpleTestCase):

    def test_round_trip_is_bitwise(self):
        grid = f32_volume(np.random.default_rng(1), (3, 32, 32))
        path = self.tmp / 'v.vol'
        write_volume(path, grid)
        np.testing.assert_array_equal(read_volume(path).data, grid.data)
        self.assertEqual(path.stat().st_size, 24 + 3 * 32 * 32 * 4)

    @settings(max_examples=50, deadline=None)
    @given(dims=st.tuples(st.integers(1, 4), st.integers(1, 20), st.integers(1, 20)), seed=st.integers(0, 1000))
    def test_round_trip_random_shapes(self, dims, seed):
        grid = f32_volume(np.random.default_rng(seed), dims)
        path = self.tmp / 'r.vol'
        write_volume(path, grid)
        restored = read_volume(path)
        np.testing.assert_array_equal(restored.data, grid.data)
        self.assertEqual(encode_volume(restored), path.read_bytes())

    def test_header_layout(self):
        path = self.tmp / 'h.vol'
        write_volume(path, VolumeGrid.zeros((1, 2, 3)))
        self.assertEqual(struct.unpack('<4sI4s3I', path.read_bytes()[:24]), (b'MORE', 1, b'f4le', 1, 2, 3))

    def test_header_errors_are_distinct(self):
        good = encode_volume(VolumeGrid.zeros((1, 2, 2)))
        cases = {
            BadMagicError: b'XXXX' + good[4:],
            UnsupportedVersionError: good[:4] + struct.pack('<I', 2) + good[8:],
            UnsupportedDtypeError: good[:8] + b'f8le' + good[12:],
            TruncatedPayloadError: good[:-3],
            CorruptHeaderError: good[:10],
        }
        for error, blob in cases.items():
            path = self.tmp / 'bad.vol'
            path.write_bytes(blob)
            with self.assertRaises(error):
                read_volume(path)

    def test_truncated_message(self):
        path = self.tmp / 't.vol'
        path.write_bytes(encode_volume(VolumeGrid.zeros((1, 4, 4)))[:-1])
        with self.assertRaisesMessage(TruncatedPayloadError, 'truncated payload'):
            read_volume(path)

    def test_missing_file(self):
        with self.assertRaises(DataIOError) as ctx:
            read_volume(self.tmp / 'absent.vol')
        self.assertIn('absent.vol', str(ctx.exception))


class SinogramFormatTests(TempDirMixin, SimpleTestCase):

    def test_round_trip_with_angles(self):
        rng = np.random.default_rng(2)
        sinogram = Sinogram(rng.random((2, 6, 10)).astype(np.float32))
        angles = tuple(k * math.pi / 6 for k in range(6))
        path = self.tmp / 's.sino'
        write_sinogram(path, sinogram, angles)
        restored, restored_angles = read_sinogram(path)
        np.testing.assert_array_equal(restored.data, sinogram.data)
        self.assertEqual(restored_angles, angles)

    def test_rejects_unordered_angles(self):
        path = self.tmp / 'u.sino'
        write_sinogram(path, Sinogram.zeros(1, 2, 4), (0.5, 0.1))
        with self.assertRaises(CorruptHeaderError):
            read_sinogram(path)

    def test_volume_file_is_not_a_sinogram(self):
        path = self.tmp / 'v.vol'
        write_volume(path, VolumeGrid.zeros((1, 2, 2)))
        with self.assertRaises(BadMagicError):
            read_sinogram(path)


class PgmTests(TempDirMixin, SimpleTestCase):

    def test_min_max_window(self):
        image = np.linspace(0.0, 2.0, 16).reshape(1, 4, 4)
        path = self.tmp / 'ramp.pgm'
        write_pgm(path, VolumeGrid(image))
        pixels = read_pgm(path)
        self.assertEqual(pixels.shape, (4, 4))
        self.assertEqual(int(pixels.min()), 0)
        self.assertEqual(int(pixels.max()), 65535)
        self.assertTrue(path.read_bytes().startswith(b'P5'))

    def test_constant_grid_is_mid_gray(self):
        path = self.tmp / 'flat.pgm'
        write_pgm(path, VolumeGrid(np.full((1, 5, 5), 0.3)))
        self.assertTrue(np.all(read_pgm(path) == MID_GRAY))

    def test_explicit_window_and_slice(self):
        volume = np.zeros((3, 2, 2))
        volume[2] = [[0.0, 0.5], [1.0, 2.0]]
        path = self.tmp / 'w.pgm'
        write_pgm(path, VolumeGrid(volume), window=(0.0, 1.0), slice_index=2)
        np.testing.assert_array_equal(read_pgm(path), [[0, 32768], [65535, 65535]])


class MetricsCsvTests(TempDirMixin, SimpleTestCase):

    def test_header_and_append(self):
        path = self.tmp / 'metrics.csv'
        write_metrics_csv(path, [metrics_row('fbp', 'shepp-logan', 60, 21.5, 0.8, 0, 0.25, 0)])
        write_metrics_csv(path, [metrics_row('gift', 'shepp-logan', 60, math.inf, 1.0, 10, 3.0, 0)])
        lines = path.read_text().splitlines()
        self.assertEqual(lines[0], ','.join(METRIC_COLUMNS))
        rows = read_metrics_csv(path)
        self.assertEqual(len(rows), 2)
        self.assertEqual(rows[1]['psnr_db'], 'inf')
        self.assertEqual(rows[0]['views'], '60')

    def test_trace_columns(self):
        path = self.tmp / 'trace.csv'
        write_trace_csv(path, [TraceRow(0, 1.5, 1.0, 0.2, 0.3, 0.01), TraceRow(1, 1.25, 0.9, 0.2, 0.15, 0.02)])
        lines = path.read_text().splitlines()
        self.assertEqual(lines[0], 'iteration,loss,l1,ssim_term,tv,elapsed_seconds')
        self.assertEqual(len(lines), 3)
