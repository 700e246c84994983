"""
16-bit PGM export of a volume slice for visual inspection.
"""
import logging

import numpy as np
from PIL import Image

from apps.core.exceptions import DataIOError

logger = logging.getLogger(__name__)

MAX_GRAY = 65535
MID_GRAY = 32768


def window_slice(image, window=None):
    """Map ``image`` to uint16 with a (low, high) window; min-max by default."""
    image = np.asarray(image, dtype=np.float64)
    low, high = window if window is not None else (float(image.min()), float(image.max()))
    if not high > low:
        return np.full(image.shape, MID_GRAY, dtype=np.uint16)
    scaled = np.clip((image - low) / (high - low), 0.0, 1.0)
    return np.round(scaled * MAX_GRAY).astype(np.uint16)


def write_pgm(path, grid, window=None, slice_index=None):
    """Write one slice (the middle one by default) as binary 16-bit PGM."""
    if slice_index is None:
        slice_index = grid.slices // 2
    pixels = window_slice(grid.data[slice_index], window)
    try:
        Image.fromarray(pixels).save(path, format='PPM')
    except OSError as exc:
        raise DataIOError(path, exc.strerror or str(exc)) from exc
    logger.debug("Wrote slice %d of %s to %s", slice_index, grid.dims, path)


def read_pgm(path):
    try:
        with Image.open(path) as image:
            return np.array(image, dtype=np.uint16)
    except OSError as exc:
        raise DataIOError(path, exc.strerror or str(exc)) from exc
