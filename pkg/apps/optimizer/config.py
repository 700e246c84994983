"""
Reconstruction run configuration.
"""
from dataclasses import dataclass, field

from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from apps.gaussians.cloud import PARAMETER_GROUPS
from apps.objective.losses import LossWeights

MAX_GAUSSIANS = 150_000
VOXELS_PER_GAUSSIAN = 1


def default_gaussian_count(voxels):
    """One Gaussian per voxel, capped at 150k."""
    return min(MAX_GAUSSIANS, max(1, voxels // VOXELS_PER_GAUSSIAN))


@dataclass(frozen=True)
class ReconConfig:
    gaussian_count: int = None
    lr: float = 3e-4
    max_iters: int = 2000
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    convergence_tol: float = 1e-5
    convergence_window: int = 100
    eval_every: int = 50
    trainable: frozenset = frozenset(PARAMETER_GROUPS)
    workers: int = None

    def __post_init__(self):
        object.__setattr__(self, 'trainable', frozenset(self.trainable))

    def clean(self):
        """Validate every field, collecting all problems like Model.full_clean()."""
        errors = {}
        if self.gaussian_count is not None and self.gaussian_count < 1:
            errors['gaussian_count'] = _('At least one Gaussian is required.')
        if not self.lr > 0:
            errors['lr'] = _('Learning rate must be positive.')
        if self.max_iters < 1:
            errors['max_iters'] = _('At least one iteration is required.')
        if not 0 <= self.seed < 2 ** 64:
            errors['seed'] = _('Seed must be an unsigned 64-bit integer.')
        if self.convergence_window < 1 or self.convergence_tol < 0:
            errors['convergence_window'] = _('Convergence window must be >= 1 with a nonnegative tolerance.')
        if self.eval_every < 1:
            errors['eval_every'] = _('eval_every must be >= 1.')
        unknown = self.trainable - set(PARAMETER_GROUPS)
        if unknown or not self.trainable:
            errors['trainable'] = _('Trainable groups must be a non-empty subset of %(groups)s.') % {
                'groups': ', '.join(PARAMETER_GROUPS),
            }
        if self.workers is not None and self.workers < 1:
            errors['workers'] = _('Worker count must be >= 1.')
        if errors:
            raise ValidationError(errors)
        self.weights.clean()

    def resolve_count(self, voxels):
        if self.gaussian_count is not None:
            return self.gaussian_count
        return default_gaussian_count(voxels)
