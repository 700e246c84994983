"""
Reconstruct a volume from a sinogram file with FBP or the Gaussian optimizer.
Usage: python manage.py reconstruct --in sino.sino --method gift --iters 500 --out recon.vol
"""
import time

from django.core.management.base import BaseCommand

from apps.benchmarks.cli import exit_codes, usage_error
from apps.benchmarks.plan import FBP, GIFT, METHODS
from apps.core.exceptions import DivergenceError
from apps.core.geometry import ProjectionGeometry, infer_square_size
from apps.datasets.formats import read_sinogram, write_volume
from apps.datasets.metrics_csv import write_trace_csv
from apps.optimizer.config import ReconConfig
from apps.optimizer.reconstruction import reconstruct
from apps.projector.fbp import fbp
from apps.projector.filters import RAM_LAK, WINDOWS


class Command(BaseCommand):
    help = 'Reconstruct a volume from a sinogram'

    def add_arguments(self, parser):
        parser.add_argument('--in', dest='input', required=True, help='Input sinogram file')
        parser.add_argument('--method', choices=METHODS, default=GIFT, help='Reconstruction method')
        parser.add_argument('--iters', type=int, default=2000, help='Maximum optimizer iterations')
        parser.add_argument('--lr', type=float, default=3e-4, help='Adam learning rate')
        parser.add_argument('--gaussians', type=int, help='Gaussian count (default: one per voxel, at most 150k)')
        parser.add_argument('--seed', type=int, default=0, help='Initialization seed')
        parser.add_argument('--eval-every', type=int, default=50, help='Progress interval in iterations')
        parser.add_argument('--size', type=int, help='Slice size; inferred from the detector count when unambiguous')
        parser.add_argument('--window', choices=WINDOWS, default=RAM_LAK, help='FBP filter window (fbp only)')
        parser.add_argument('--workers', type=int, help='Data-parallel workers (default GIFT_WORKERS)')
        parser.add_argument('--out', required=True, help='Output volume file')
        parser.add_argument('--trace', help='Loss-trace CSV (gift only)')

    def handle(self, *args, **options):
        if options['trace'] and options['method'] != GIFT:
            raise usage_error('--trace is only available with --method gift')
        if options['size'] is not None and options['size'] < 1:
            raise usage_error(f"--size must be a positive integer, got {options['size']}")
        if options['window'] != RAM_LAK and options['method'] != FBP:
            raise usage_error('--window is only available with --method fbp')

        started = time.perf_counter()
        with exit_codes():
            sinogram, angles = read_sinogram(options['input'])
            size = options['size'] if options['size'] is not None else infer_square_size(sinogram.detectors)
            geometry = ProjectionGeometry(angles=angles, detectors=sinogram.detectors, slice_dims=(size, size))

            if options['method'] == FBP:
                volume = fbp(sinogram, geometry, window=options['window'], workers=options['workers'])
            else:
                volume = self._run_gift(sinogram, geometry, options)
            write_volume(options['out'], volume)

        elapsed = time.perf_counter() - started
        self.stderr.write(self.style.SUCCESS(f"Wrote {options['method']} volume {volume.dims} to {options['out']} "
                                             f"in {elapsed:.2f}s"))

    def _run_gift(self, sinogram, geometry, options):
        config = ReconConfig(
            gaussian_count=options['gaussians'],
            lr=options['lr'],
            max_iters=options['iters'],
            seed=options['seed'],
            eval_every=options['eval_every'],
            workers=options['workers'],
        )

        def progress(iteration, loss, elapsed):
            self.stderr.write(f"iter {iteration:6d}  loss {loss:.6e}  {elapsed:8.1f}s")

        try:
            result = reconstruct(sinogram, geometry, config, progress=progress)
        except DivergenceError as exc:
            if exc.best_volume is not None:
                write_volume(options['out'], exc.best_volume)
                self.stderr.write(self.style.WARNING(f"Best volume so far written to {options['out']}"))
            if options['trace']:
                write_trace_csv(options['trace'], exc.loss_trace)
            raise

        if options['trace']:
            write_trace_csv(options['trace'], result.loss_trace)
        if result.interrupted:
            self.stderr.write(self.style.WARNING(f"Interrupted after {result.iterations} iterations"))
        elif result.converged:
            self.stderr.write(f"Converged after {result.iterations} iterations")
        return result.volume
