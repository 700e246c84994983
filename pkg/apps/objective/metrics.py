"""
Evaluation metrics for reconstructed volumes.
"""
import math

import numpy as np

from apps.core.exceptions import ShapeMismatchError

from .losses import as_array, measurement_range
from .ssim import SsimConfig, ssim_slices


def _pair(image, reference):
    image = as_array(image)
    reference = as_array(reference)
    if image.shape != reference.shape:
        raise ShapeMismatchError(f"Image {image.shape} and reference {reference.shape} differ in shape")
    return image, reference


def psnr(image, reference, data_range=None):
    """10 log10(L^2 / MSE) in dB; identical inputs give +inf."""
    image, reference = _pair(image, reference)
    if data_range is None:
        data_range = measurement_range(reference)
    if data_range <= 0:
        raise ValueError(f"PSNR data range must be positive, got {data_range}")
    mse = float(np.mean((image - reference) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / mse)


def ssim_metric(image, reference, data_range=None):
    """Mean SSIM over slices of two volumes (or over a single 2D image)."""
    image, reference = _pair(image, reference)
    if data_range is None:
        data_range = measurement_range(reference)
    if image.ndim == 2:
        image, reference = image[None], reference[None]
    value, _ = ssim_slices(image, reference, SsimConfig(data_range=data_range))
    return value
