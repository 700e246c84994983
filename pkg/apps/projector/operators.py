"""
Discrete parallel-beam Radon transform and its exact adjoint.

Every ray is sampled at step 0.5 grid units; each sample bilinearly
interpolates the slice and is weighted by the step (Joseph-style
ray-driven integration). The resulting linear map is stored as one CSR
block per chunk of views, rows ordered (view, detector) and columns
``row * W + col``. The adjoint multiplies by the transpose of the very
same blocks, so the two operators are exact transposes of each other.
"""
import logging
import math
from functools import lru_cache

import numpy as np
from scipy import sparse

from apps.core.conf import get_setting
from apps.core.exceptions import ShapeMismatchError
from apps.core.grids import Sinogram, VolumeGrid
from apps.core.parallel import chunk_bounds, ordered_map, ordered_sum

logger = logging.getLogger(__name__)

SAMPLE_STEP = 0.5

# upper bound: 2 samples per unit area, 4 bilinear corners, 8-byte value + 4-byte index
_BYTES_PER_VOXEL_VIEW = 2 * 4 * 12


def ray_samples(geometry):
    """Sample positions along every ray, symmetric around the detector line."""
    height, width = geometry.slice_dims
    half_length = 0.5 * math.hypot(height, width) + 1.0
    count = 2 * math.ceil(half_length / SAMPLE_STEP) + 1
    return (np.arange(count, dtype=np.float64) - (count - 1) / 2.0) * SAMPLE_STEP


def _view_entries(geometry, theta, offsets, samples):
    """CSR pieces (column indices, weights, per-ray counts) for one view."""
    height, width = geometry.slice_dims
    center_row, center_col = geometry.center
    cos_t, sin_t = math.cos(theta), math.sin(theta)

    # (detectors, samples) world coordinates, ray-major
    x = offsets[:, None] * cos_t - samples[None, :] * sin_t
    y = offsets[:, None] * sin_t + samples[None, :] * cos_t
    rows = y + center_row
    cols = x + center_col

    ray_ids = np.broadcast_to(np.arange(offsets.size)[:, None], rows.shape)
    reach = (rows > -1.0) & (rows < height) & (cols > -1.0) & (cols < width)
    rows, cols, ray_ids = rows[reach], cols[reach], ray_ids[reach]

    row0 = np.floor(rows)
    col0 = np.floor(cols)
    frac_r = rows - row0
    frac_c = cols - col0
    row0 = row0.astype(np.int64)
    col0 = col0.astype(np.int64)

    corner_rows = np.stack([row0, row0, row0 + 1, row0 + 1], axis=-1)
    corner_cols = np.stack([col0, col0 + 1, col0, col0 + 1], axis=-1)
    weights = np.stack([
        (1.0 - frac_r) * (1.0 - frac_c),
        (1.0 - frac_r) * frac_c,
        frac_r * (1.0 - frac_c),
        frac_r * frac_c,
    ], axis=-1) * SAMPLE_STEP
    corner_rays = np.broadcast_to(ray_ids[:, None], corner_rows.shape)

    keep = (
        (corner_rows >= 0) & (corner_rows < height)
        & (corner_cols >= 0) & (corner_cols < width)
        & (weights > 0.0)
    )
    columns = corner_rows[keep] * width + corner_cols[keep]
    counts = np.bincount(corner_rays[keep], minlength=offsets.size)
    return columns, weights[keep], counts


def build_view_block(geometry, start, stop):
    """System-matrix rows for views ``[start, stop)`` as a CSR matrix."""
    height, width = geometry.slice_dims
    offsets = geometry.detector_positions()
    samples = ray_samples(geometry)
    angles = geometry.angle_array()

    columns, values, counts = [], [], []
    for view in range(start, stop):
        view_columns, view_values, view_counts = _view_entries(geometry, angles[view], offsets, samples)
        columns.append(view_columns)
        values.append(view_values)
        counts.append(view_counts)

    counts = np.concatenate(counts)
    indptr = np.zeros(counts.size + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    shape = ((stop - start) * geometry.detectors, height * width)
    block = sparse.csr_matrix((np.concatenate(values), np.concatenate(columns), indptr), shape=shape)
    # one entry per (ray, voxel)
    block.sum_duplicates()
    return block


class RadonOperator:
    """
    Forward projector / backprojector pair for one geometry.

    Blocks are cached when the estimated footprint fits in
    ``PROJECTOR_CACHE_MB``; otherwise each call rebuilds them.
    """

    def __init__(self, geometry, view_chunk=None, cache_mb=None):
        self.geometry = geometry
        view_chunk = view_chunk or get_setting('PROJECTOR_VIEW_CHUNK', 8)
        cache_mb = get_setting('PROJECTOR_CACHE_MB', 512) if cache_mb is None else cache_mb
        self.chunks = chunk_bounds(geometry.views, view_chunk)

        height, width = geometry.slice_dims
        estimate_mb = geometry.views * height * width * _BYTES_PER_VOXEL_VIEW / 2 ** 20
        self.cacheable = estimate_mb <= cache_mb
        self._blocks = {}
        logger.debug(
            "Radon operator: %d views in %d chunks, ~%.0f MB, cached=%s",
            geometry.views, len(self.chunks), estimate_mb, self.cacheable,
        )

    def block(self, index):
        cached = self._blocks.get(index)
        if cached is not None:
            return cached
        start, stop = self.chunks[index]
        block = build_view_block(self.geometry, start, stop)
        if self.cacheable:
            self._blocks[index] = block
        return block

    def forward(self, volume, workers=None):
        """(C, H, W) array -> (C, views, detectors) array."""
        slices = volume.shape[0]
        columns = np.ascontiguousarray(volume.reshape(slices, -1).T)
        detectors = self.geometry.detectors

        def project(index):
            start, stop = self.chunks[index]
            rays = self.block(index) @ columns
            return rays.reshape(stop - start, detectors, slices)

        parts = ordered_map(project, range(len(self.chunks)), workers)
        return np.ascontiguousarray(np.concatenate(parts, axis=0).transpose(2, 0, 1))

    def adjoint(self, sinogram, workers=None):
        """(C, views, detectors) array -> (C, H, W) array."""
        slices = sinogram.shape[0]
        height, width = self.geometry.slice_dims

        def backproject(index):
            start, stop = self.chunks[index]
            rays = np.ascontiguousarray(sinogram[:, start:stop, :].reshape(slices, -1).T)
            return self.block(index).T @ rays

        parts = ordered_map(backproject, range(len(self.chunks)), workers)
        columns = ordered_sum(parts, np.zeros((height * width, slices)))
        return np.ascontiguousarray(columns.T.reshape(slices, height, width))


@lru_cache(maxsize=2)
def get_operator(geometry):
    return RadonOperator(geometry)


def _check_volume(volume, geometry):
    if tuple(volume.shape[1:]) != geometry.slice_dims:
        raise ShapeMismatchError(
            f"Volume slice dims {tuple(volume.shape[1:])} do not match geometry {geometry.slice_dims}"
        )


def _check_sinogram(sinogram, geometry):
    if tuple(sinogram.shape[1:]) != geometry.sinogram_shape:
        raise ShapeMismatchError(
            f"Sinogram shape {tuple(sinogram.shape[1:])} does not match geometry {geometry.sinogram_shape}"
        )


def forward_array(volume, geometry, workers=None):
    _check_volume(volume, geometry)
    return get_operator(geometry).forward(volume, workers)


def adjoint_array(sinogram, geometry, workers=None):
    _check_sinogram(sinogram, geometry)
    return get_operator(geometry).adjoint(sinogram, workers)


def radon_forward(grid, geometry, workers=None):
    """Line integrals of ``grid`` for every (slice, view, detector)."""
    return Sinogram(forward_array(grid.data, geometry, workers))


def radon_adjoint(sinogram, geometry, workers=None):
    """Exact transpose of :func:`radon_forward`."""
    return VolumeGrid(adjoint_array(sinogram.data, geometry, workers))
