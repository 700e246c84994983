"""
Value objects for the reconstruction target and the measurements.

Both wrap a read-only float64 array laid out row-major; once built they
are never mutated, so they can be shared freely between workers.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import ShapeMismatchError


def _frozen_array(data, ndim, label):
    array = np.array(data, dtype=np.float64, copy=True, order='C')
    if array.ndim != ndim:
        raise ShapeMismatchError(f"{label} must be {ndim}-dimensional, got shape {array.shape}")
    if any(size < 1 for size in array.shape):
        raise ShapeMismatchError(f"{label} dimensions must be >= 1, got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{label} contains non-finite values")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class VolumeGrid:
    """
    Discretized intensity field of shape (C, H, W).

    C == 1 denotes a single 2D slice. Voxel spacing is one grid unit.
    """
    data: np.ndarray

    spacing = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'data', _frozen_array(self.data, 3, 'VolumeGrid'))

    @classmethod
    def zeros(cls, dims):
        return cls(np.zeros(tuple(dims)))

    @classmethod
    def from_slice(cls, image):
        """Wrap a 2D (H, W) array as a single-slice grid."""
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 2:
            raise ShapeMismatchError(f"Expected a 2D slice, got shape {image.shape}")
        return cls(image[None, :, :])

    @property
    def dims(self):
        return self.data.shape

    @property
    def slices(self):
        return self.data.shape[0]

    @property
    def slice_dims(self):
        return self.data.shape[1:]

    @property
    def is_2d(self):
        return self.data.shape[0] == 1

    def clamp_nonnegative(self):
        return VolumeGrid(np.maximum(self.data, 0.0))

    def total_mass(self):
        return float(self.data.sum())

    def __repr__(self):
        return f"VolumeGrid(dims={self.dims})"


@dataclass(frozen=True, eq=False)
class Sinogram:
    """
    Line-integral measurements of shape (C, views, detectors).
    """
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'data', _frozen_array(self.data, 3, 'Sinogram'))

    @classmethod
    def zeros(cls, slices, views, detectors):
        return cls(np.zeros((slices, views, detectors)))

    @property
    def slices(self):
        return self.data.shape[0]

    @property
    def views(self):
        return self.data.shape[1]

    @property
    def detectors(self):
        return self.data.shape[2]

    @property
    def dims(self):
        return self.data.shape

    def data_range(self):
        return float(self.data.max() - self.data.min())

    def __repr__(self):
        return f"Sinogram(slices={self.slices}, views={self.views}, detectors={self.detectors})"
