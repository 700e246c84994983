"""
Write a synthetic phantom volume.
Usage: python manage.py phantom --kind shepp-logan --size 128 --out phantom.vol
"""
from django.core.management.base import BaseCommand

from apps.benchmarks.cli import exit_codes
from apps.datasets.formats import write_volume
from apps.datasets.images import write_pgm
from apps.datasets.phantoms import PHANTOM_KINDS, make_phantom


class Command(BaseCommand):
    help = 'Generate a Shepp-Logan or lesion phantom and write it as a volume file'

    def add_arguments(self, parser):
        parser.add_argument('--kind', choices=PHANTOM_KINDS, default='shepp-logan', help='Phantom kind')
        parser.add_argument('--size', type=int, default=128, help='Slice size in pixels (square)')
        parser.add_argument('--slices', type=int, default=1, help='Number of slices (Shepp-Logan only)')
        parser.add_argument('--seed', type=int, default=0, help='Seed for lesion placement')
        parser.add_argument('--out', required=True, help='Output volume file')
        parser.add_argument('--pgm', help='Also write the middle slice as a 16-bit PGM')

    def handle(self, *args, **options):
        with exit_codes():
            phantom = make_phantom(options['kind'], options['size'], seed=options['seed'], slices=options['slices'])
            write_volume(options['out'], phantom)
            if options['pgm']:
                write_pgm(options['pgm'], phantom)

        self.stderr.write(self.style.SUCCESS(f"Wrote {options['kind']} phantom {phantom.dims} to {options['out']}"))
