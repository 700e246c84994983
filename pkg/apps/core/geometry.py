"""
Parallel-beam acquisition geometry and the grid <-> world convention.

Grid index (row i, col j) maps to world x = j - (W-1)/2, y = i - (H-1)/2,
so the rotation center is the geometric center of the slice. A view at
angle theta integrates along direction (-sin theta, cos theta); detector k
sits at signed offset s_k = (k - (n-1)/2) * spacing along (cos theta, sin theta).
"""
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import GeometryError


def detector_count(slice_dims):
    """ceil of the slice diagonal, rounded up to the next even integer."""
    height, width = slice_dims
    count = math.ceil(math.hypot(height, width))
    return count + (count % 2)


def square_sizes_for(detectors):
    """Every square slice size whose detector rule yields ``detectors``."""
    return [size for size in range(1, detectors + 1) if detector_count((size, size)) == detectors]


def infer_square_size(detectors):
    """
    The one square slice size that produces ``detectors``.

    Raises GeometryError when no size or more than one size fits; the
    caller then has to be told the size explicitly.
    """
    candidates = square_sizes_for(detectors)
    if not candidates:
        raise GeometryError(f"No square slice size produces {detectors} detectors")
    if len(candidates) > 1:
        listed = ' or '.join(str(size) for size in candidates)
        raise GeometryError(f"{detectors} detectors fit slice sizes {listed}; pass --size to choose")
    return candidates[0]


@dataclass(frozen=True)
class ProjectionGeometry:
    angles: tuple
    detectors: int
    slice_dims: tuple
    detector_spacing: float = 1.0

    def __post_init__(self):
        angles = tuple(float(angle) for angle in self.angles)
        object.__setattr__(self, 'angles', angles)
        object.__setattr__(self, 'slice_dims', tuple(int(size) for size in self.slice_dims))

        if not angles:
            raise GeometryError("Geometry needs at least one view angle")
        if any(not (0.0 <= angle < math.pi) for angle in angles):
            raise GeometryError("View angles must lie in [0, pi)")
        if any(b <= a for a, b in zip(angles, angles[1:])):
            raise GeometryError("View angles must be strictly increasing")
        if self.detectors < 1:
            raise GeometryError("Detector count must be >= 1")
        if len(self.slice_dims) != 2 or min(self.slice_dims) < 1:
            raise GeometryError(f"Slice dims must be two positive sizes, got {self.slice_dims}")
        if self.detector_spacing <= 0:
            raise GeometryError("Detector spacing must be positive")

    @property
    def views(self):
        return len(self.angles)

    @property
    def center(self):
        """Rotation center in grid coordinates (row, col)."""
        height, width = self.slice_dims
        return ((height - 1) / 2.0, (width - 1) / 2.0)

    @property
    def sinogram_shape(self):
        return (self.views, self.detectors)

    def angle_array(self):
        return np.asarray(self.angles, dtype=np.float64)

    def detector_positions(self):
        offsets = np.arange(self.detectors, dtype=np.float64) - (self.detectors - 1) / 2.0
        return offsets * self.detector_spacing

    def grid_to_world(self, rows, cols):
        center_row, center_col = self.center
        return np.asarray(cols, dtype=np.float64) - center_col, np.asarray(rows, dtype=np.float64) - center_row

    def world_to_grid(self, x, y):
        center_row, center_col = self.center
        return np.asarray(y, dtype=np.float64) + center_row, np.asarray(x, dtype=np.float64) + center_col

    def with_views(self, views):
        return make_geometry(views, self.slice_dims)


def make_geometry(views, slice_dims):
    """
    Evenly spaced parallel-beam geometry over [0, pi) for an (H, W) slice.
    """
    if int(views) != views or views < 1:
        raise GeometryError(f"views must be a positive integer, got {views}")
    slice_dims = tuple(int(size) for size in slice_dims)
    if len(slice_dims) != 2 or min(slice_dims) < 1:
        raise GeometryError(f"slice dims must be two positive sizes, got {slice_dims}")

    views = int(views)
    angles = tuple(k * math.pi / views for k in range(views))
    return ProjectionGeometry(
        angles=angles,
        detectors=detector_count(slice_dims),
        slice_dims=slice_dims,
    )
