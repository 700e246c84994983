"""
Score a reconstruction against a reference volume.
Usage: python manage.py evaluate --recon recon.vol --ref phantom.vol --out-csv metrics.csv
"""
from pathlib import Path

from django.core.management.base import BaseCommand

from apps.benchmarks.cli import exit_codes
from apps.benchmarks.models import BenchmarkRun
from apps.datasets.formats import read_volume
from apps.datasets.metrics_csv import format_float, write_metrics_csv
from apps.objective.metrics import psnr, ssim_metric


class Command(BaseCommand):
    help = 'Compute PSNR and SSIM of a reconstruction and append them to a metrics CSV'

    def add_arguments(self, parser):
        parser.add_argument('--recon', required=True, help='Reconstructed volume file')
        parser.add_argument('--ref', required=True, help='Reference volume file')
        parser.add_argument('--out-csv', required=True, help='Metrics CSV to append to')
        parser.add_argument('--method', default='external', help='Method label for the row')
        parser.add_argument('--phantom', help='Phantom label (default: reference file name)')
        parser.add_argument('--views', type=int, default=0, help='View count label for the row')
        parser.add_argument('--iters', type=int, default=0, help='Iteration count label for the row')
        parser.add_argument('--seed', type=int, default=0, help='Seed label for the row')
        parser.add_argument('--record', action='store_true', help='Also store the row in the database')

    def handle(self, *args, **options):
        with exit_codes():
            recon = read_volume(options['recon'])
            reference = read_volume(options['ref'])
            psnr_db = psnr(recon, reference)
            ssim = ssim_metric(recon, reference)

            run = BenchmarkRun.from_metrics(
                options['method'],
                options['phantom'] or Path(options['ref']).stem,
                options['views'],
                psnr_db,
                ssim,
                options['iters'],
                0.0,
                options['seed'],
            )
            write_metrics_csv(options['out_csv'], [run.as_metrics_row()])
            if options['record']:
                run.save()

        self.stdout.write(f"psnr_db={format_float(psnr_db)} ssim={format_float(ssim)}")
