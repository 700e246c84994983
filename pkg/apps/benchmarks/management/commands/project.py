"""
Simulate a parallel-beam sinogram from a volume file.
Usage: python manage.py project --in phantom.vol --views 60 --out sino.sino
"""
from django.core.management.base import BaseCommand

from apps.benchmarks.cli import exit_codes
from apps.core.geometry import make_geometry
from apps.datasets.formats import read_volume, write_sinogram
from apps.datasets.noise import NoiseModel, add_noise
from apps.projector.operators import radon_forward


class Command(BaseCommand):
    help = 'Project a volume into a sinogram with evenly spaced views over [0, pi)'

    def add_arguments(self, parser):
        parser.add_argument('--in', dest='input', required=True, help='Input volume file')
        parser.add_argument('--views', type=int, required=True, help='Number of projection views')
        parser.add_argument('--noise', default='none', help='none, gaussian:<sigma> or poisson:<I0>')
        parser.add_argument('--seed', type=int, default=0, help='Noise seed')
        parser.add_argument('--workers', type=int, help='Data-parallel workers (default GIFT_WORKERS)')
        parser.add_argument('--out', required=True, help='Output sinogram file')

    def handle(self, *args, **options):
        with exit_codes():
            noise = NoiseModel.parse(options['noise'])
            volume = read_volume(options['input'])
            geometry = make_geometry(options['views'], volume.slice_dims)
            sinogram = radon_forward(volume, geometry, options['workers'])
            sinogram = add_noise(sinogram, noise, seed=options['seed'])
            write_sinogram(options['out'], sinogram, geometry.angles)

        self.stderr.write(self.style.SUCCESS(f"Wrote sinogram {sinogram.dims} ({noise}) to {options['out']}"))
