"""
Voxelization of a Gaussian cloud and its analytic vector-Jacobian product.

Each Gaussian touches only the shared integer box around floor(mean).
Gaussians are processed in fixed chunks; every chunk scatters into its
own partial grid and the partials are summed in chunk order, so the
result does not depend on the worker count.
"""
import logging
from dataclasses import dataclass

import numpy as np

from apps.core.conf import get_setting
from apps.core.exceptions import ShapeMismatchError
from apps.core.grids import VolumeGrid
from apps.core.parallel import chunk_bounds, ordered_map, ordered_sum

from .cloud import CloudGradients
from .neighborhood import neighborhood_for
from .precision import precision_from_params, rotation_gradient

logger = logging.getLogger(__name__)


def mahalanobis_sq(offsets, frac, precision):
    """
    Squared Mahalanobis distance of every offset from every sub-voxel
    shift, expanded into four precomputable terms.

    offsets (K, D), frac (n, D), precision (n, D, D) -> (n, K).
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    _check_operands(offsets, frac, precision)
    quad = np.einsum('kd,nde,ke->nk', offsets, precision, offsets)
    cross_a = np.einsum('kd,nde,ne->nk', offsets, precision, frac)
    cross_b = np.einsum('nd,nde,ke->nk', frac, precision, offsets)
    bias = np.einsum('nd,nde,ne->n', frac, precision, frac)
    return quad - cross_a - cross_b + bias[:, None]


def mahalanobis_sq_direct(offsets, frac, precision):
    """Reference (delta - frac)^T P (delta - frac) without the expansion."""
    offsets = np.asarray(offsets, dtype=np.float64)
    _check_operands(offsets, frac, precision)
    shifted = offsets[None, :, :] - frac[:, None, :]
    return np.einsum('nkd,nde,nke->nk', shifted, precision, shifted)


def _check_operands(offsets, frac, precision):
    if offsets.ndim != 2 or frac.ndim != 2 or precision.ndim != 3:
        raise ShapeMismatchError("Expected offsets (K, D), shifts (n, D) and precisions (n, D, D)")
    dim = offsets.shape[1]
    if frac.shape[1] != dim or precision.shape[1:] != (dim, dim) or precision.shape[0] != frac.shape[0]:
        raise ShapeMismatchError(
            f"Inconsistent operand shapes {offsets.shape}, {frac.shape}, {precision.shape}"
        )


def resolve_dims(cloud, dims):
    """
    Split requested grid dims into (volume dims, Gaussian-space dims).

    2D clouds render a single slice and accept (H, W) or (1, H, W).
    """
    dims = tuple(int(size) for size in dims)
    if any(size < 1 for size in dims):
        raise ShapeMismatchError(f"Grid dimensions must be >= 1, got {dims}")
    if cloud.dim == 2:
        if len(dims) == 3 and dims[0] != 1:
            raise ShapeMismatchError(f"2D Gaussians render a single slice, got dims {dims}")
        if len(dims) not in (2, 3):
            raise ShapeMismatchError(f"Expected (H, W) or (1, H, W), got {dims}")
        space = dims[-2:]
        return (1,) + space, space
    if len(dims) != 3:
        raise ShapeMismatchError(f"3D Gaussians need (C, H, W) dims, got {dims}")
    return dims, dims


@dataclass(frozen=True, eq=False)
class ContributionBlock:
    """Per-Gaussian voxel contributions for one chunk."""
    flat_index: np.ndarray      # (n, K) row-major voxel index, 0 where out of bounds
    in_bounds: np.ndarray       # (n, K)
    offsets: np.ndarray         # (K, D)
    frac: np.ndarray            # (n, D) mean - floor(mean)
    kernel: np.ndarray          # (n, K) exp(-D^2 / 2), 0 out of bounds
    precision: object

    def values(self, intensities):
        return self.kernel * intensities[:, None]


def contributions(chunk, space_dims, neighborhood):
    precision = precision_from_params(chunk.log_scales, chunk.rotations)
    base = np.floor(chunk.means)
    frac = chunk.means - base
    base = base.astype(np.int64)

    offsets = neighborhood.offsets
    coords = base[:, None, :] + offsets[None, :, :]
    sizes = np.asarray(space_dims, dtype=np.int64)
    in_bounds = np.all((coords >= 0) & (coords < sizes), axis=2)
    flat_index = np.ravel_multi_index(
        tuple(np.where(in_bounds, coords[..., axis], 0) for axis in range(len(space_dims))),
        space_dims,
    )

    distance = mahalanobis_sq(offsets, frac, precision.matrices)
    kernel = np.where(in_bounds, np.exp(-0.5 * distance), 0.0)
    return ContributionBlock(
        flat_index=flat_index,
        in_bounds=in_bounds,
        offsets=offsets.astype(np.float64),
        frac=frac,
        kernel=kernel,
        precision=precision,
    )


def _gaussian_chunks(cloud):
    return chunk_bounds(cloud.count, get_setting('GAUSSIAN_CHUNK', 4096))


def rasterize(cloud, dims, neighborhood=None, workers=None):
    """Render ``cloud`` onto a VolumeGrid of the requested dims."""
    volume_dims, space_dims = resolve_dims(cloud, dims)
    if neighborhood is None:
        neighborhood = neighborhood_for(cloud, space_dims)
    voxels = int(np.prod(space_dims))

    def render(bounds):
        chunk = cloud.subset(*bounds)
        block = contributions(chunk, space_dims, neighborhood)
        return np.bincount(
            block.flat_index[block.in_bounds],
            weights=block.values(chunk.intensities)[block.in_bounds],
            minlength=voxels,
        )

    partials = ordered_map(render, _gaussian_chunks(cloud), workers)
    total = ordered_sum(partials, np.zeros(voxels))
    logger.debug(
        "Rasterized %d Gaussians onto %s with radii %s", cloud.count, volume_dims, neighborhood.radii
    )
    return VolumeGrid(total.reshape(volume_dims))


def rasterize_dense_oracle(cloud, dims, neighborhood=None):
    """
    Evaluate every Gaussian at every voxel directly.

    With a ``neighborhood`` each Gaussian is restricted to the same box the
    fast path uses, which makes the two comparable to rounding error.
    """
    volume_dims, space_dims = resolve_dims(cloud, dims)
    axes = [np.arange(size, dtype=np.float64) for size in space_dims]
    coords = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, len(space_dims))
    precision = precision_from_params(cloud.log_scales, cloud.rotations).matrices
    base = np.floor(cloud.means)
    total = np.zeros(coords.shape[0])

    step = max(1, (1 << 22) // coords.shape[0])
    for start, stop in chunk_bounds(cloud.count, step):
        diff = coords[None, :, :] - cloud.means[start:stop, None, :]
        distance = np.einsum('nvd,nde,nve->nv', diff, precision[start:stop], diff)
        values = np.exp(-0.5 * distance) * cloud.intensities[start:stop, None]
        if neighborhood is not None:
            radii = np.asarray(neighborhood.radii, dtype=np.float64)
            shift = np.abs(coords[None, :, :] - base[start:stop, None, :])
            values = np.where(np.all(shift <= radii, axis=2), values, 0.0)
        total += values.sum(axis=0)
    return VolumeGrid(total.reshape(volume_dims))


def rasterize_vjp(cloud, upstream, neighborhood=None, workers=None):
    """
    Pull an upstream voxel gradient back to all cloud parameters.

    The floor(mean) in the neighborhood lookup is treated as
    piecewise-constant, so mean gradients flow only through the sub-voxel
    shift. The neighborhood must be the one used for the forward pass.
    """
    upstream = upstream.data if isinstance(upstream, VolumeGrid) else np.asarray(upstream, dtype=np.float64)
    volume_dims, space_dims = resolve_dims(cloud, upstream.shape)
    if upstream.shape != volume_dims:
        raise ShapeMismatchError(f"Upstream gradient shape {upstream.shape} != grid {volume_dims}")
    if neighborhood is None:
        neighborhood = neighborhood_for(cloud, space_dims)
    flat_upstream = upstream.reshape(-1)

    def pullback(bounds):
        chunk = cloud.subset(*bounds)
        block = contributions(chunk, space_dims, neighborhood)
        precision = block.precision
        seen = np.where(block.in_bounds, flat_upstream[block.flat_index], 0.0)

        d_intensities = np.sum(seen * block.kernel, axis=1)
        weight = seen * block.values(chunk.intensities)
        shifted = block.offsets[None, :, :] - block.frac[:, None, :]
        d_means = np.einsum('nk,nde,nke->nd', weight, precision.matrices, shifted)

        grad_precision = -0.5 * np.einsum('nk,nkd,nke->nde', weight, shifted, shifted)
        rot = precision.rotations
        lam = precision.inverse_variances
        d_lam = np.einsum('nij,nik,nkj->nj', rot, grad_precision, rot)
        d_log_scales = -2.0 * lam * d_lam
        grad_rot = 2.0 * np.einsum('nik,nkj,nj->nij', grad_precision, rot, lam)
        d_rotations = rotation_gradient(chunk.rotations, chunk.dim, grad_rot)

        return CloudGradients(
            means=d_means,
            log_scales=d_log_scales,
            rotations=d_rotations,
            intensities=d_intensities,
        )

    return CloudGradients.concatenate(ordered_map(pullback, _gaussian_chunks(cloud), workers))
