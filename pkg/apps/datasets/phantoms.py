"""
Synthetic test objects: the modified Shepp-Logan phantom (2D and stacked
3D) and seeded lesion phantoms.
"""
import logging
from dataclasses import dataclass

import numpy as np

from apps.core.exceptions import GeometryError
from apps.core.grids import VolumeGrid

logger = logging.getLogger(__name__)

MIN_PHANTOM_SIZE = 16

# (gray value, semi-axis a, semi-axis b, x center, y center, rotation in degrees)
SHEPP_LOGAN_ELLIPSES = np.array([
    [1.0, .69, .92, 0.0, 0.0, 0.0],
    [-.8, .6624, .874, 0.0, -.0184, 0.0],
    [-.2, .11, .31, .22, 0.0, -18.0],
    [-.2, .16, .41, -.22, 0.0, 18.0],
    [.1, .21, .25, 0.0, .35, 0.0],
    [.1, .046, .046, 0.0, .1, 0.0],
    [.1, .046, .046, 0.0, -.1, 0.0],
    [.1, .046, .023, -.08, -.605, 0.0],
    [.1, .023, .023, 0.0, -.605, 0.0],
    [.1, .023, .046, .06, -.605, 0.0],
])

# axial semi-axes of the ellipsoid extension, all centered at z = 0
SHEPP_LOGAN_AXIAL = np.array([.81, .78, .22, .28, .41, .05, .05, .05, .02, .02])


def _check_size(size):
    if int(size) != size or size < MIN_PHANTOM_SIZE:
        raise GeometryError(f"Phantom size must be an integer >= {MIN_PHANTOM_SIZE}, got {size}")


def shepp_logan_value(x, y, z=0.0, table=SHEPP_LOGAN_ELLIPSES, axial=None):
    """Analytic phantom value at normalized coordinates in [-1, 1]."""
    x, y, z = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (x, y, z)))
    value = np.zeros(x.shape)
    for index, (gray, a, b, xc, yc, degrees) in enumerate(table):
        theta = np.deg2rad(degrees)
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        u = (x - xc) * cos_t + (y - yc) * sin_t
        v = (x - xc) * sin_t - (y - yc) * cos_t
        inside = (u / a) ** 2 + (v / b) ** 2
        if axial is not None:
            inside = inside + (z / axial[index]) ** 2
        value[inside <= 1.0] += gray
    return value


def shepp_logan(size, slices=1, supersample=1):
    """
    Modified Shepp-Logan phantom on a size x size grid, values in [0, 1].

    Row 0 is the top of the image (y = +1). With ``slices > 1`` the
    ellipses become ellipsoids sampled on z in [-1, 1]; the z = 0 section
    is the 2D phantom. ``supersample`` averages s x s sub-pixel samples.
    """
    _check_size(size)
    if slices < 1 or supersample < 1:
        raise GeometryError("slices and supersample must be >= 1")

    step = 2.0 / (size - 1)
    sub = (np.arange(supersample) + 0.5) / supersample - 0.5 if supersample > 1 else np.zeros(1)
    coords = np.linspace(-1.0, 1.0, size)
    z_coords = np.linspace(-1.0, 1.0, slices) if slices > 1 else np.zeros(1)
    axial = SHEPP_LOGAN_AXIAL if slices > 1 else None

    volume = np.zeros((slices, size, size))
    for k, z in enumerate(z_coords):
        for dy in sub:
            for dx in sub:
                x, y = np.meshgrid(coords + dx * step, -(coords + dy * step))
                volume[k] += shepp_logan_value(x, y, z, axial=axial)
    volume /= sub.size ** 2
    return VolumeGrid(np.clip(volume, 0.0, 1.0))


@dataclass(frozen=True)
class LesionKind:
    name: str
    contrast: tuple   # signed (low, high)
    radius: tuple     # fraction of the grid size


LESION_KINDS = {
    'calcification': LesionKind('calcification', (0.35, 0.6), (0.01, 0.02)),
    'emphysema': LesionKind('emphysema', (-0.3, -0.15), (0.04, 0.08)),
    'cyst': LesionKind('cyst', (-0.15, -0.05), (0.03, 0.06)),
    'nodule': LesionKind('nodule', (0.1, 0.25), (0.02, 0.04)),
    'hemorrhage': LesionKind('hemorrhage', (0.05, 0.15), (0.03, 0.07)),
}


@dataclass(frozen=True)
class LesionInsert:
    kind: str
    center: tuple     # (row, col)
    radius: float
    contrast: float


def lesion_inserts(size, seed, count=None):
    """
    Seeded inserts inside the body region; the first one is always a
    calcification so every phantom carries a high-contrast speck.
    """
    _check_size(size)
    rng = np.random.default_rng(seed)
    count = int(rng.integers(3, 7)) if count is None else count
    extra = rng.choice(sorted(LESION_KINDS), size=max(0, count - 1))
    names = ['calcification'] + [str(name) for name in extra]

    inserts = []
    center = (size - 1) / 2.0
    for name in names:
        kind = LESION_KINDS[name]
        radius = max(1.0, rng.uniform(*kind.radius) * size)
        reach = max(0.0, 0.3 * size - radius)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        distance = reach * np.sqrt(rng.uniform())
        inserts.append(LesionInsert(
            kind=name,
            center=(center + distance * np.sin(angle), center + distance * np.cos(angle)),
            radius=float(radius),
            contrast=float(rng.uniform(*kind.contrast)),
        ))
    return inserts


def lesion_phantom(size, seed):
    """Smooth seeded anatomy plus the inserts of :func:`lesion_inserts`."""
    _check_size(size)
    rng = np.random.default_rng(seed)
    rows, cols = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing='ij')
    center = (size - 1) / 2.0

    body = ((rows - center) / (0.42 * size)) ** 2 + ((cols - center) / (0.38 * size)) ** 2
    image = 0.4 / (1.0 + np.exp((body - 1.0) * 12.0))
    for _ in range(3):
        row, col = center + rng.uniform(-0.2, 0.2, size=2) * size
        sigma = rng.uniform(0.06, 0.12) * size
        amplitude = rng.uniform(0.1, 0.25)
        image += amplitude * np.exp(-((rows - row) ** 2 + (cols - col) ** 2) / (2.0 * sigma ** 2))

    for insert in lesion_inserts(size, seed):
        row, col = insert.center
        mask = (rows - row) ** 2 + (cols - col) ** 2 <= insert.radius ** 2
        image[mask] += insert.contrast
    logger.debug("Lesion phantom %d^2 with seed %s", size, seed)
    return VolumeGrid.from_slice(np.maximum(image, 0.0))


PHANTOM_KINDS = ('shepp-logan', 'lesion')


def make_phantom(kind, size, seed=0, slices=1):
    if kind == 'shepp-logan':
        return shepp_logan(size, slices=slices)
    if kind == 'lesion':
        if slices != 1:
            raise GeometryError("Lesion phantoms are single-slice")
        return lesion_phantom(size, seed)
    raise ValueError(f"Unknown phantom kind '{kind}', expected one of {PHANTOM_KINDS}")
