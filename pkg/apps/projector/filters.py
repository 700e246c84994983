"""
Ramp filtering of projection rows for filtered back projection.
"""
import math
from dataclasses import dataclass

import numpy as np

from apps.core.exceptions import ShapeMismatchError
from apps.core.grids import Sinogram

RAM_LAK = 'ram-lak'
HANN = 'hann'
WINDOWS = (RAM_LAK, HANN)


@dataclass(frozen=True, eq=False)
class RampFilter:
    length: int
    response: np.ndarray
    window: str = RAM_LAK


def fft_length(detectors):
    """Next power of two >= 2 * detectors."""
    return max(2, 1 << (2 * detectors - 1).bit_length())


def ram_lak_taps(offsets):
    """Spatial Ram-Lak kernel at integer ``offsets`` (detector spacing 1)."""
    offsets = np.abs(np.asarray(offsets, dtype=np.int64))
    taps = np.zeros(offsets.shape, dtype=np.float64)
    taps[offsets == 0] = 0.25
    odd = offsets % 2 == 1
    taps[odd] = -1.0 / (math.pi ** 2 * offsets[odd].astype(np.float64) ** 2)
    return taps


def build_ramp_filter(detectors, window=RAM_LAK):
    """
    Frequency response of the spatial kernel laid out circularly on the
    FFT length; the DC bin is whatever the truncated kernel sums to.
    """
    if window not in WINDOWS:
        raise ValueError(f"Unknown filter window '{window}', expected one of {WINDOWS}")
    length = fft_length(detectors)
    index = np.arange(length)
    kernel = ram_lak_taps(np.minimum(index, length - index))
    response = np.real(np.fft.fft(kernel))
    if window == HANN:
        response *= 0.5 * (1.0 + np.cos(2.0 * math.pi * np.fft.fftfreq(length)))
    return RampFilter(length=length, response=response, window=window)


def filter_rows(rows, window=RAM_LAK):
    """Filter the last axis of ``rows`` with zero padding to the FFT length."""
    detectors = rows.shape[-1]
    ramp = build_ramp_filter(detectors, window)
    half = ramp.response[: ramp.length // 2 + 1]
    spectrum = np.fft.rfft(rows, n=ramp.length, axis=-1) * half
    return np.fft.irfft(spectrum, n=ramp.length, axis=-1)[..., :detectors]


def ramp_filter(sinogram, window=RAM_LAK):
    if sinogram.detectors < 2:
        raise ShapeMismatchError("Ramp filtering needs at least 2 detectors")
    return Sinogram(filter_rows(sinogram.data, window))
