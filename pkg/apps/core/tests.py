import math

import numpy as np
from django.test import SimpleTestCase, override_settings

from .conf import resolve_workers
from .exceptions import GeometryError, ShapeMismatchError
from .geometry import ProjectionGeometry, detector_count, infer_square_size, make_geometry, square_sizes_for
from .grids import Sinogram, VolumeGrid
from .parallel import chunk_bounds, ordered_map, ordered_sum


class GeometryTests(SimpleTestCase):

    def test_detector_count_for_standard_grid(self):
        geometry = make_geometry(180, (128, 128))
        self.assertEqual(geometry.detectors, 182)
        self.assertEqual(geometry.views, 180)

    def test_tiny_grid_single_view(self):
        geometry = make_geometry(1, (2, 2))
        self.assertEqual(geometry.angles, (0.0,))
        self.assertEqual(geometry.detectors, 4)

    def test_angles_evenly_spaced(self):
        geometry = make_geometry(60, (64, 64))
        steps = np.diff(geometry.angle_array())
        np.testing.assert_allclose(steps, math.pi / 60, rtol=0, atol=1e-12)
        self.assertLess(geometry.angles[-1], math.pi)

    def test_rejects_nonpositive_views(self):
        for views in (0, -3, 2.5):
            with self.assertRaises(GeometryError):
                make_geometry(views, (16, 16))

    def test_rejects_bad_slice_dims(self):
        with self.assertRaises(GeometryError):
            make_geometry(10, (0, 16))

    def test_rejects_non_increasing_angles(self):
        with self.assertRaises(GeometryError):
            ProjectionGeometry(angles=(0.5, 0.5), detectors=4, slice_dims=(2, 2))
        with self.assertRaises(GeometryError):
            ProjectionGeometry(angles=(0.0, math.pi), detectors=4, slice_dims=(2, 2))

    def test_grid_world_round_trip(self):
        geometry = make_geometry(4, (17, 32))
        rows, cols = np.meshgrid(np.arange(17.0), np.arange(32.0), indexing='ij')
        x, y = geometry.grid_to_world(rows, cols)
        back_rows, back_cols = geometry.world_to_grid(x, y)
        np.testing.assert_allclose(back_rows, rows, atol=1e-12)
        np.testing.assert_allclose(back_cols, cols, atol=1e-12)

    def test_detector_positions_centered(self):
        positions = make_geometry(3, (8, 8)).detector_positions()
        self.assertAlmostEqual(positions.sum(), 0.0)
        self.assertEqual(positions.size, detector_count((8, 8)))

    def test_infer_square_size(self):
        self.assertEqual(infer_square_size(detector_count((128, 128))), 128)
        self.assertEqual(infer_square_size(detector_count((32, 32))), 32)
        with self.assertRaises(GeometryError):
            infer_square_size(1)

    def test_ambiguous_detector_count_names_every_size(self):
        self.assertEqual(square_sizes_for(92), [64, 65])
        self.assertEqual(square_sizes_for(364), [256, 257])
        with self.assertRaisesMessage(GeometryError, '64 or 65'):
            infer_square_size(detector_count((64, 64)))

    def test_geometry_is_deterministic(self):
        self.assertEqual(make_geometry(37, (30, 30)), make_geometry(37, (30, 30)))


class GridTests(SimpleTestCase):

    def test_volume_is_read_only(self):
        grid = VolumeGrid.zeros((1, 4, 4))
        with self.assertRaises(ValueError):
            grid.data[0, 0, 0] = 1.0

    def test_rejects_wrong_rank(self):
        with self.assertRaises(ShapeMismatchError):
            VolumeGrid(np.zeros((4, 4)))
        with self.assertRaises(ShapeMismatchError):
            Sinogram(np.zeros((0, 3, 4)))

    def test_rejects_non_finite(self):
        data = np.zeros((1, 2, 2))
        data[0, 1, 1] = np.nan
        with self.assertRaises(ValueError):
            VolumeGrid(data)

    def test_from_slice_and_mass(self):
        grid = VolumeGrid.from_slice(np.ones((3, 5)))
        self.assertTrue(grid.is_2d)
        self.assertEqual(grid.slice_dims, (3, 5))
        self.assertEqual(grid.total_mass(), 15.0)

    def test_clamp_nonnegative(self):
        grid = VolumeGrid(np.array([[[-1.0, 2.0]]]))
        np.testing.assert_array_equal(grid.clamp_nonnegative().data, [[[0.0, 2.0]]])


class ParallelTests(SimpleTestCase):

    def test_chunk_bounds_cover_range(self):
        self.assertEqual(chunk_bounds(10, 4), [(0, 4), (4, 8), (8, 10)])
        self.assertEqual(chunk_bounds(0, 4), [])

    def test_ordered_map_keeps_order(self):
        items = list(range(20))
        self.assertEqual(ordered_map(lambda value: value * value, items, workers=4), [v * v for v in items])

    def test_ordered_sum_independent_of_workers(self):
        rng = np.random.default_rng(3)
        parts = [rng.normal(size=50) for _ in range(9)]
        serial = ordered_sum(ordered_map(np.copy, parts, workers=1), np.zeros(50))
        threaded = ordered_sum(ordered_map(np.copy, parts, workers=4), np.zeros(50))
        np.testing.assert_array_equal(serial, threaded)

    @override_settings(GIFT_WORKERS=3)
    def test_workers_default_from_settings(self):
        self.assertEqual(resolve_workers(), 3)
        self.assertEqual(resolve_workers(0), 1)
