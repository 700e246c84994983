"""
Composite reconstruction objective:

    lambda_1 * L1(M_hat, M) + lambda_2 * (1 - SSIM(M_hat, M)) + lambda_3 * TV(V)

Every term is mean-normalized and returns its value together with the
cotangent needed to chain through the projector adjoint and the
rasterizer VJP.
"""
from dataclasses import dataclass

import numpy as np
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from apps.core.exceptions import ShapeMismatchError
from apps.core.grids import Sinogram, VolumeGrid

from .ssim import SsimConfig, ssim_slices


def as_array(value):
    if isinstance(value, (VolumeGrid, Sinogram)):
        return value.data
    return np.asarray(value, dtype=np.float64)


@dataclass(frozen=True)
class LossWeights:
    l1: float = 0.4
    ssim: float = 0.1
    tv: float = 0.5

    def __post_init__(self):
        self.clean()

    def clean(self):
        for name in ('l1', 'ssim', 'tv'):
            weight = getattr(self, name)
            if not np.isfinite(weight) or weight < 0:
                raise ValidationError(
                    _('Loss weight %(name)s must be a nonnegative number, got %(value)s'),
                    params={'name': name, 'value': weight},
                    code='invalid',
                )


@dataclass(frozen=True, eq=False)
class LossBreakdown:
    total: float
    l1: float
    ssim_term: float
    tv: float
    grad_volume: np.ndarray
    grad_predicted: np.ndarray


def l1_loss(predicted, measured):
    """Mean absolute difference and its subgradient (sign(0) = 0)."""
    predicted = as_array(predicted)
    measured = as_array(measured)
    if predicted.shape != measured.shape:
        raise ShapeMismatchError(f"L1 inputs differ in shape: {predicted.shape} vs {measured.shape}")
    diff = predicted - measured
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def tv(volume):
    """
    Anisotropic total variation: sum over axes of the mean absolute
    forward difference. Axes of length one contribute nothing.
    """
    volume = as_array(volume)
    value = 0.0
    grad = np.zeros_like(volume)
    for axis in range(volume.ndim):
        if volume.shape[axis] < 2:
            continue
        diff = np.diff(volume, axis=axis)
        value += float(np.mean(np.abs(diff)))
        sign = np.sign(diff) / diff.size
        head = [slice(None)] * volume.ndim
        tail = [slice(None)] * volume.ndim
        head[axis] = slice(1, None)
        tail[axis] = slice(None, -1)
        grad[tuple(head)] += sign
        grad[tuple(tail)] -= sign
    return value, grad


def measurement_range(measured):
    """SSIM data range of a measurement: max - min, or 1.0 when flat."""
    measured = as_array(measured)
    span = float(measured.max() - measured.min())
    return span if span > 0 else 1.0


def composite_loss(volume, predicted, measured, weights=None, ssim_config=None):
    weights = weights or LossWeights()
    volume = as_array(volume)
    predicted = as_array(predicted)
    measured = as_array(measured)
    if predicted.shape != measured.shape:
        raise ShapeMismatchError(f"Predicted sinogram {predicted.shape} != measured {measured.shape}")
    if ssim_config is None:
        ssim_config = SsimConfig(data_range=measurement_range(measured))

    l1_value, l1_grad = l1_loss(predicted, measured)
    ssim_value, ssim_grad = ssim_slices(predicted, measured, ssim_config)
    tv_value, tv_grad = tv(volume)

    ssim_term = 1.0 - ssim_value
    total = weights.l1 * l1_value + weights.ssim * ssim_term + weights.tv * tv_value
    return LossBreakdown(
        total=total,
        l1=l1_value,
        ssim_term=ssim_term,
        tv=tv_value,
        grad_volume=weights.tv * tv_grad,
        grad_predicted=weights.l1 * l1_grad - weights.ssim * ssim_grad,
    )
