"""
Filtered back projection baseline.
"""
import logging
import math

import numpy as np

from apps.core.grids import VolumeGrid

from .filters import RAM_LAK, ramp_filter
from .operators import adjoint_array

logger = logging.getLogger(__name__)


def fbp(sinogram, geometry, window=RAM_LAK, workers=None):
    """
    Backproject the ramp-filtered sinogram, scale by pi / views and clamp
    to non-negative attenuation.
    """
    filtered = ramp_filter(sinogram, window)
    volume = adjoint_array(filtered.data, geometry, workers) * (math.pi / geometry.views)
    logger.debug("FBP over %d views (%s window)", geometry.views, window)
    return VolumeGrid(np.maximum(volume, 0.0))
