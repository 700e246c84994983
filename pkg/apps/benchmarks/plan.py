"""
Benchmark plans: which phantom to reconstruct, with which methods, at
which view counts and seeds.

A plan file holds ``key=value`` lines; ``#`` starts a comment. List
values are comma separated::

    phantom = shepp-logan
    size = 128
    views = 60, 90, 120, 180
    methods = fbp, gift
"""
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from apps.core.conf import get_setting
from apps.core.exceptions import DataIOError
from apps.datasets.noise import NoiseModel
from apps.datasets.phantoms import MIN_PHANTOM_SIZE, PHANTOM_KINDS

FBP = 'fbp'
GIFT = 'gift'
METHODS = (FBP, GIFT)
DEFAULT_VIEWS = (60, 90, 120, 180)


def _int_list(value):
    return tuple(int(item) for item in value.split(',') if item.strip())


def _str_list(value):
    return tuple(item.strip().lower() for item in value.split(',') if item.strip())


def _bool(value):
    lowered = value.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(value)


def _optional_int(value):
    return None if value.strip().lower() in ('', 'auto', 'none') else int(value)


PLAN_KEYS = {
    'phantom': str.strip,
    'size': int,
    'phantom_seed': int,
    'views': _int_list,
    'methods': _str_list,
    'seeds': _int_list,
    'output': str.strip,
    'iters': int,
    'lr': float,
    'gaussians': _optional_int,
    'noise': NoiseModel.parse,
    'parallel': _bool,
}


@dataclass(frozen=True)
class BenchPlan:
    phantom: str = 'shepp-logan'
    size: int = 128
    phantom_seed: int = 0
    views: tuple = DEFAULT_VIEWS
    methods: tuple = METHODS
    seeds: tuple = (0,)
    output: str = None
    iters: int = 2000
    lr: float = 3e-4
    gaussians: int = None
    noise: NoiseModel = field(default_factory=NoiseModel)
    parallel: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'views', tuple(self.views))
        object.__setattr__(self, 'methods', tuple(self.methods))
        object.__setattr__(self, 'seeds', tuple(self.seeds))
        if self.output is None:
            object.__setattr__(self, 'output', get_setting('BENCH_OUTPUT_DIR', 'bench'))

    def clean(self):
        errors = {}
        if self.phantom not in PHANTOM_KINDS:
            errors['phantom'] = _('Unknown phantom "%(kind)s".') % {'kind': self.phantom}
        if self.size < MIN_PHANTOM_SIZE:
            errors['size'] = _('Phantom size must be at least %(minimum)d.') % {'minimum': MIN_PHANTOM_SIZE}
        if not self.views or any(view < 1 for view in self.views):
            errors['views'] = _('The view list must be non-empty and positive.')
        if not self.methods or any(method not in METHODS for method in self.methods):
            errors['methods'] = _('Methods must be a non-empty subset of fbp, gift.')
        if not self.seeds or any(seed < 0 for seed in self.seeds):
            errors['seeds'] = _('At least one nonnegative seed is required.')
        if self.iters < 1:
            errors['iters'] = _('At least one iteration is required.')
        if not self.lr > 0:
            errors['lr'] = _('Learning rate must be positive.')
        if self.gaussians is not None and self.gaussians < 1:
            errors['gaussians'] = _('At least one Gaussian is required.')
        if errors:
            raise ValidationError(errors)

    @property
    def phantom_label(self):
        return f"{self.phantom}-{self.size}"

    def entries(self):
        """The run cross-product in a fixed order: views, then method, then seed."""
        return [
            (views, method, seed)
            for views in self.views
            for method in self.methods
            for seed in (self.seeds if method == GIFT else self.seeds[:1])
        ]

    def with_overrides(self, **overrides):
        """Copy with every non-None override applied."""
        changes = {key: value for key, value in overrides.items() if value is not None}
        plan = dataclasses.replace(self, **changes)
        plan.clean()
        return plan

    @classmethod
    def parse(cls, text, source='<plan>'):
        values = {}
        errors = []
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition('=')
            key = key.strip().lower()
            if not sep or key not in PLAN_KEYS:
                errors.append(f"{source}:{number}: expected one of {', '.join(PLAN_KEYS)} as key=value")
                continue
            try:
                values[key] = PLAN_KEYS[key](value)
            except (ValueError, ValidationError):
                errors.append(f"{source}:{number}: invalid value for {key}: {value.strip()!r}")
        if errors:
            raise ValidationError(errors)
        plan = cls(**values)
        plan.clean()
        return plan

    @classmethod
    def from_file(cls, path):
        try:
            text = Path(path).read_text(encoding='utf-8')
        except OSError as exc:
            raise DataIOError(path, exc.strerror or str(exc)) from exc
        return cls.parse(text, source=str(path))
