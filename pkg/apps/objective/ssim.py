"""
Windowed SSIM with its analytic gradient with respect to the first image.

Local statistics come from an 11-tap Gaussian window (sigma 1.5) applied
separably with mirrored borders. Images with a side shorter than the
window fall back to global statistics over a single window.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from apps.core.exceptions import ShapeMismatchError


@dataclass(frozen=True)
class SsimConfig:
    data_range: float = 1.0
    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03

    def __post_init__(self):
        self.clean()

    def clean(self):
        if not np.isfinite(self.data_range) or self.data_range <= 0:
            raise ValidationError(_('SSIM data range must be positive, got %(value)s'),
                                  params={'value': self.data_range}, code='invalid')
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValidationError(_('SSIM window size must be a positive odd number'), code='invalid')
        if self.sigma <= 0:
            raise ValidationError(_('SSIM window sigma must be positive'), code='invalid')

    @property
    def c1(self):
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self):
        return (self.k2 * self.data_range) ** 2

    def taps(self):
        """1D window; its outer product with itself sums to one."""
        offsets = np.arange(self.window_size, dtype=np.float64) - self.window_size // 2
        taps = np.exp(-(offsets ** 2) / (2.0 * self.sigma ** 2))
        return taps / taps.sum()


@dataclass(frozen=True, eq=False)
class SsimResult:
    value: float
    grad: np.ndarray
    ssim_map: np.ndarray


def _window(image, taps):
    """Separable local mean; scipy's 'mirror' border is numpy's 'reflect' padding."""
    rows = ndimage.correlate1d(image, taps, axis=0, mode='mirror')
    return ndimage.correlate1d(rows, taps, axis=1, mode='mirror')


@lru_cache(maxsize=16)
def _window_matrix(size, taps):
    """The mirrored 1D window as a (size, size) matrix: column j filters the j-th unit vector."""
    return ndimage.correlate1d(np.eye(size), np.asarray(taps), axis=0, mode='mirror')


def _window_adjoint(grad, taps):
    """Transpose of ``_window``, border folding included."""
    taps = tuple(taps)
    return _window_matrix(grad.shape[0], taps).T @ grad @ _window_matrix(grad.shape[1], taps)


def _ssim_terms(mu_a, mu_b, f_aa, f_bb, f_ab, config):
    """SSIM map and its partials with respect to (F_a, F_aa, F_ab)."""
    c1, c2 = config.c1, config.c2
    var_a = f_aa - mu_a * mu_a
    var_b = f_bb - mu_b * mu_b
    cov = f_ab - mu_a * mu_b

    a1 = 2.0 * mu_a * mu_b + c1
    a2 = 2.0 * cov + c2
    b1 = mu_a * mu_a + mu_b * mu_b + c1
    b2 = var_a + var_b + c2
    ssim_map = (a1 * a2) / (b1 * b2)

    d_mu = 2.0 * mu_b * a2 / (b1 * b2) - ssim_map * 2.0 * mu_a / b1
    d_var = -ssim_map / b2
    d_cov = 2.0 * a1 / (b1 * b2)

    d_fa = d_mu - 2.0 * mu_a * d_var - mu_b * d_cov
    return ssim_map, d_fa, d_var, d_cov


def _global_ssim(a, b, config):
    count = a.size
    mu_a, mu_b = a.mean(), b.mean()
    ssim_value, d_fa, d_faa, d_fab = _ssim_terms(
        mu_a, mu_b, np.mean(a * a), np.mean(b * b), np.mean(a * b), config,
    )
    grad = (d_fa + 2.0 * a * d_faa + b * d_fab) / count
    return SsimResult(value=float(ssim_value), grad=grad, ssim_map=np.full(a.shape, ssim_value))


def ssim(a, b, config=None):
    """Mean SSIM of two 2D images and d(mean SSIM)/d(a)."""
    config = config or SsimConfig()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"SSIM inputs differ in shape: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ShapeMismatchError(f"SSIM expects 2D images, got shape {a.shape}")
    if min(a.shape) < config.window_size:
        return _global_ssim(a, b, config)

    taps = config.taps()
    mu_a = _window(a, taps)
    mu_b = _window(b, taps)
    f_aa = _window(a * a, taps)
    f_bb = _window(b * b, taps)
    f_ab = _window(a * b, taps)
    ssim_map, d_fa, d_faa, d_fab = _ssim_terms(mu_a, mu_b, f_aa, f_bb, f_ab, config)

    scale = 1.0 / ssim_map.size
    grad = (
        _window_adjoint(d_fa * scale, taps)
        + 2.0 * a * _window_adjoint(d_faa * scale, taps)
        + b * _window_adjoint(d_fab * scale, taps)
    )
    return SsimResult(value=float(ssim_map.mean()), grad=grad, ssim_map=ssim_map)


def ssim_slices(a, b, config=None):
    """Average SSIM over the leading axis of two (C, H, W) stacks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 3:
        raise ShapeMismatchError(f"Expected two equal (C, H, W) stacks, got {a.shape} and {b.shape}")
    results = [ssim(a[index], b[index], config) for index in range(a.shape[0])]
    count = len(results)
    value = sum(result.value for result in results) / count
    grad = np.stack([result.grad for result in results]) / count
    return value, grad
