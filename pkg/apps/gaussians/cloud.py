"""
The optimizable Gaussian cloud and its gradient container.
"""
from dataclasses import dataclass, fields

import numpy as np

from apps.core.exceptions import ShapeMismatchError

PARAMETER_GROUPS = ('means', 'log_scales', 'rotations', 'intensities')


def rotation_width(dim):
    """One angle per Gaussian in 2D, one quaternion (w, x, y, z) in 3D."""
    return 1 if dim == 2 else 4


@dataclass(eq=False)
class GaussianCloud:
    """
    n Gaussians in grid coordinates.

    Mean coordinates follow the grid axes: (row, col) in 2D and
    (slice, row, col) in 3D. Scales are per-axis log standard deviations.
    """
    means: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    intensities: np.ndarray

    def __post_init__(self):
        self.means = np.array(self.means, dtype=np.float64, ndmin=2)
        self.log_scales = np.array(self.log_scales, dtype=np.float64, ndmin=2)
        self.rotations = np.array(self.rotations, dtype=np.float64, ndmin=2)
        self.intensities = np.array(self.intensities, dtype=np.float64, ndmin=1)

        count, dim = self.means.shape
        if count < 1:
            raise ShapeMismatchError("A Gaussian cloud needs at least one Gaussian")
        if dim not in (2, 3):
            raise ShapeMismatchError(f"Gaussians must be 2D or 3D, got D={dim}")
        expected = {
            'log_scales': (count, dim),
            'rotations': (count, rotation_width(dim)),
            'intensities': (count,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeMismatchError(f"{name} must have shape {shape}, got {getattr(self, name).shape}")
        for name in PARAMETER_GROUPS:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"Gaussian {name} contain non-finite values")
        if dim == 3:
            self.normalize_rotations()

    @classmethod
    def isotropic(cls, means, sigma, intensities):
        """Axis-aligned Gaussians sharing one standard deviation."""
        means = np.array(means, dtype=np.float64, ndmin=2)
        count, dim = means.shape
        rotations = np.zeros((count, rotation_width(dim)))
        if dim == 3:
            rotations[:, 0] = 1.0
        return cls(
            means=means,
            log_scales=np.full((count, dim), np.log(sigma)),
            rotations=rotations,
            intensities=np.broadcast_to(np.asarray(intensities, dtype=np.float64), (count,)),
        )

    @property
    def count(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def parameters(self):
        """Live parameter arrays by group name, for in-place updates."""
        return {name: getattr(self, name) for name in PARAMETER_GROUPS}

    def copy(self):
        return GaussianCloud(**{name: array.copy() for name, array in self.parameters().items()})

    def subset(self, start, stop):
        return GaussianCloud(**{name: array[start:stop] for name, array in self.parameters().items()})

    def normalize_rotations(self):
        if self.dim == 3:
            norms = np.linalg.norm(self.rotations, axis=1, keepdims=True)
            if np.any(norms == 0.0):
                raise ValueError("Quaternion rotations must be nonzero")
            self.rotations /= norms

    def __repr__(self):
        return f"GaussianCloud(count={self.count}, dim={self.dim})"


@dataclass(eq=False)
class CloudGradients:
    means: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    intensities: np.ndarray

    @classmethod
    def zeros_like(cls, cloud):
        return cls(**{name: np.zeros_like(array) for name, array in cloud.parameters().items()})

    @classmethod
    def concatenate(cls, parts):
        return cls(**{
            field.name: np.concatenate([getattr(part, field.name) for part in parts], axis=0)
            for field in fields(cls)
        })

    def as_dict(self):
        return {name: getattr(self, name) for name in PARAMETER_GROUPS}

    def flat(self):
        return np.concatenate([getattr(self, name).ravel() for name in PARAMETER_GROUPS])

    def is_finite(self):
        return all(np.all(np.isfinite(getattr(self, name))) for name in PARAMETER_GROUPS)
