"""
SPD-by-construction covariance parameterization.

Sigma = R S S^T R^T with S = diag(exp(log_scales)), so the precision is
R diag(exp(-2 log_scales)) R^T, computed without inverting anything.
"""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class PrecisionSet:
    matrices: np.ndarray            # (n, D, D) inverse covariances
    rotations: np.ndarray           # (n, D, D)
    inverse_variances: np.ndarray   # (n, D), exp(-2 log_scales)

    @property
    def positive_definite(self):
        return bool(np.all(self.inverse_variances > 0.0))


def rotation_matrices_2d(angles):
    angles = np.asarray(angles, dtype=np.float64).reshape(-1)
    cos, sin = np.cos(angles), np.sin(angles)
    return np.stack([
        np.stack([cos, -sin], axis=-1),
        np.stack([sin, cos], axis=-1),
    ], axis=-2)


def _unit_quaternions(quaternions):
    quaternions = np.asarray(quaternions, dtype=np.float64)
    norms = np.linalg.norm(quaternions, axis=1, keepdims=True)
    return quaternions / norms, norms


def rotation_matrices_3d(quaternions):
    """Rotation matrices from (w, x, y, z) quaternions, renormalized first."""
    q, _ = _unit_quaternions(quaternions)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
    ], axis=-2)


def rotation_matrices(rotations, dim):
    if dim == 2:
        return rotation_matrices_2d(rotations)
    return rotation_matrices_3d(rotations)


def precision_from_params(log_scales, rotations):
    log_scales = np.asarray(log_scales, dtype=np.float64)
    dim = log_scales.shape[1]
    rot = rotation_matrices(rotations, dim)
    inverse_variances = np.exp(-2.0 * log_scales)
    matrices = np.einsum('nij,nj,nkj->nik', rot, inverse_variances, rot)
    matrices = 0.5 * (matrices + np.swapaxes(matrices, 1, 2))
    return PrecisionSet(matrices=matrices, rotations=rot, inverse_variances=inverse_variances)


def rotation_gradient(rotations, dim, grad_rotation_matrix):
    """
    Pull dL/dR (n, D, D) back to the stored rotation parameters.

    2D angles differentiate directly; 3D quaternions go through the
    unit-norm projection, so the gradient is tangent to the sphere.
    """
    if dim == 2:
        angles = np.asarray(rotations, dtype=np.float64).reshape(-1)
        cos, sin = np.cos(angles), np.sin(angles)
        d_rot = np.stack([
            np.stack([-sin, -cos], axis=-1),
            np.stack([cos, -sin], axis=-1),
        ], axis=-2)
        return np.einsum('nij,nij->n', grad_rotation_matrix, d_rot)[:, None]

    q, norms = _unit_quaternions(rotations)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zero = np.zeros_like(w)

    def mat(rows):
        return 2.0 * np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)

    d_w = mat([[zero, -z, y], [z, zero, -x], [-y, x, zero]])
    d_x = mat([[zero, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    d_y = mat([[-2 * y, x, w], [x, zero, z], [-w, z, -2 * y]])
    d_z = mat([[-2 * z, -w, x], [w, -2 * z, y], [x, y, zero]])
    d_unit = np.stack([
        np.einsum('nij,nij->n', grad_rotation_matrix, d_part) for d_part in (d_w, d_x, d_y, d_z)
    ], axis=-1)

    radial = np.sum(d_unit * q, axis=1, keepdims=True)
    return (d_unit - radial * q) / norms
