"""
3-sigma confinement: one shared integer box sized from the median scale.
"""
import math
from dataclasses import dataclass

import numpy as np

# absorbs exp/log round-off so that sigma == 1 gives radius 3, not 4
_RADIUS_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class NeighborhoodSpec:
    radii: tuple
    offsets: np.ndarray     # (c*h*w, D) integer offsets, lexicographic

    @property
    def size(self):
        return self.offsets.shape[0]

    @property
    def dim(self):
        return len(self.radii)


def median_std(cloud):
    """Per-axis median standard deviation (mean of the middle pair for even n)."""
    if cloud.count < 1:
        raise ValueError("median_std needs at least one Gaussian")
    return np.median(np.exp(cloud.log_scales), axis=0)


def box_offsets(radii):
    axes = [np.arange(-radius, radius + 1, dtype=np.int64) for radius in radii]
    grid = np.meshgrid(*axes, indexing='ij')
    return np.stack(grid, axis=-1).reshape(-1, len(radii))


def neighborhood_offsets(sigma, dims):
    """
    radius_a = clamp(ceil(3 * sigma_a), 1, dim_a); offsets enumerate the box.
    """
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
    dims = tuple(dims)[-sigma.size:]
    if np.any(sigma <= 0.0):
        raise ValueError("Median standard deviation must be positive")
    radii = tuple(
        int(min(max(math.ceil(3.0 * s - _RADIUS_SLACK), 1), size))
        for s, size in zip(sigma, dims)
    )
    return NeighborhoodSpec(radii=radii, offsets=box_offsets(radii))


def neighborhood_for(cloud, dims):
    return neighborhood_offsets(median_std(cloud), dims)
