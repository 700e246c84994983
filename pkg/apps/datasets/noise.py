"""
Seeded measurement noise for simulated sinograms.
"""
from dataclasses import dataclass

import numpy as np
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from apps.core.grids import Sinogram

NONE = 'none'
GAUSSIAN = 'gaussian'
POISSON = 'poisson'
NOISE_KINDS = (NONE, GAUSSIAN, POISSON)


@dataclass(frozen=True)
class NoiseModel:
    """
    ``gaussian`` adds N(0, level^2) to every bin; ``poisson`` draws photon
    counts with ``level`` incident photons per ray and re-takes the log.
    """
    kind: str = NONE
    level: float = 0.0

    def __post_init__(self):
        self.clean()

    def clean(self):
        if self.kind not in NOISE_KINDS:
            raise ValidationError(_('Unknown noise model "%(kind)s".'), params={'kind': self.kind}, code='invalid')
        if self.kind == GAUSSIAN and not self.level >= 0:
            raise ValidationError(_('Gaussian noise sigma must be >= 0.'), code='invalid')
        if self.kind == POISSON and not self.level > 0:
            raise ValidationError(_('Poisson incident count must be > 0.'), code='invalid')

    @classmethod
    def parse(cls, text):
        """``none``, ``gaussian:<sigma>`` or ``poisson:<I0>``."""
        kind, _sep, level = text.strip().lower().partition(':')
        if kind == NONE and not level:
            return cls()
        if kind not in (GAUSSIAN, POISSON) or not level:
            raise ValidationError(
                _('Noise must be none, gaussian:<sigma> or poisson:<I0>, got "%(text)s".'),
                params={'text': text}, code='invalid',
            )
        try:
            value = float(level)
        except ValueError:
            raise ValidationError(_('Noise level "%(level)s" is not a number.'), params={'level': level},
                                  code='invalid')
        return cls(kind=kind, level=value)

    def __str__(self):
        return self.kind if self.kind == NONE else f"{self.kind}:{self.level:g}"


def add_noise(sinogram, model, seed=0):
    if model.kind == NONE or (model.kind == GAUSSIAN and model.level == 0.0):
        return Sinogram(sinogram.data)

    rng = np.random.default_rng(seed)
    if model.kind == GAUSSIAN:
        return Sinogram(sinogram.data + rng.normal(0.0, model.level, size=sinogram.dims))

    expected = model.level * np.exp(-sinogram.data)
    counts = np.maximum(rng.poisson(expected), 1)
    return Sinogram(-np.log(counts / model.level))
