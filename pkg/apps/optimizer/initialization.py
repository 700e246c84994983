"""
Initial Gaussian cloud: a jittered lattice whose intensities are read off
the FBP reconstruction of the measured sinogram.
"""
import logging
import math

import numpy as np
from scipy import ndimage

from apps.core.exceptions import GeometryError, ShapeMismatchError
from apps.gaussians.cloud import GaussianCloud, rotation_width
from apps.gaussians.rasterizer import rasterize
from apps.projector.fbp import fbp

logger = logging.getLogger(__name__)

# lower bound on the summed unit-intensity footprint at a mean
COVERAGE_FLOOR = 0.1


def target_dims(sinogram, geometry):
    """(C, H, W) of the volume being reconstructed."""
    if tuple(sinogram.data.shape[1:]) != geometry.sinogram_shape:
        raise ShapeMismatchError(
            f"Sinogram {sinogram.dims} does not match geometry {geometry.sinogram_shape}"
        )
    return (sinogram.slices,) + tuple(geometry.slice_dims)


def space_dims(volume_dims):
    """Gaussian coordinate axes: (H, W) for one slice, (C, H, W) otherwise."""
    return tuple(volume_dims[1:]) if volume_dims[0] == 1 else tuple(volume_dims)


def lattice_means(dims, count, rng):
    """``count`` jittered lattice points covering ``dims``, one pitch apart."""
    voxels = math.prod(dims)
    pitch = (voxels / count) ** (1.0 / len(dims))
    per_axis = [max(1, math.ceil(size / pitch)) for size in dims]
    axes = [(np.arange(points) + 0.5) * (size / points) - 0.5 for points, size in zip(per_axis, dims)]
    lattice = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, len(dims))

    chosen = np.round(np.linspace(0, lattice.shape[0] - 1, count)).astype(np.int64)
    means = lattice[chosen] + rng.uniform(-0.5, 0.5, size=(count, len(dims)))
    upper = np.nextafter(np.asarray(dims, dtype=np.float64), 0.0)
    return np.clip(means, 0.0, upper), pitch


def sample_at(values, means):
    """Linear interpolation of a 2D or 3D array at (n, D) grid coordinates."""
    return ndimage.map_coordinates(values, means.T, order=1, mode='nearest')


def init_cloud(sinogram, geometry, config, fbp_volume=None):
    """
    Jittered lattice of isotropic Gaussians whose rendering reproduces the
    FBP reconstruction.

    Each intensity is the FBP value at the mean divided by how much the
    unit-intensity cloud already covers that point, so overlapping
    neighbours do not inflate the render; a final global factor matches
    the total mass of the FBP volume.
    """
    dims = target_dims(sinogram, geometry)
    if min(dims) < 1 or geometry.views < 1:
        raise GeometryError(f"Cannot initialize Gaussians on degenerate grid {dims}")
    space = space_dims(dims)
    count = config.resolve_count(math.prod(dims))
    rng = np.random.default_rng(config.seed)
    means, pitch = lattice_means(space, count, rng)

    rotations = np.zeros((count, rotation_width(len(space))))
    if len(space) == 3:
        rotations[:, 0] = 1.0

    if fbp_volume is None:
        fbp_volume = fbp(sinogram, geometry, workers=config.workers)
    source = fbp_volume.data[0] if len(space) == 2 else fbp_volume.data
    cloud = GaussianCloud(
        means=means,
        log_scales=np.full((count, len(space)), math.log(pitch / 2.0)),
        rotations=rotations,
        intensities=np.ones(count),
    )
    coverage_grid = rasterize(cloud, dims, workers=config.workers).data
    coverage = sample_at(coverage_grid[0] if len(space) == 2 else coverage_grid, means)
    cloud.intensities = np.maximum(sample_at(source, means), 0.0) / np.maximum(coverage, COVERAGE_FLOOR)

    rendered_mass = rasterize(cloud, dims, workers=config.workers).total_mass()
    target_mass = fbp_volume.total_mass()
    if rendered_mass > 0.0:
        cloud.intensities *= target_mass / rendered_mass

    logger.info(
        "Initialized %d Gaussians on %s (pitch %.3f, FBP mass %.4g)", count, dims, pitch, target_mass
    )
    return cloud
