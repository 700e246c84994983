"""
Run the sparse-view benchmark sweep.
Usage: python manage.py bench [--plan plan.txt] [--views 60,90,120,180] [--methods fbp,gift]
"""
from django.core.management.base import BaseCommand, CommandError

from apps.benchmarks.cli import EXIT_IO, exit_codes, parse_int_list, parse_str_list
from apps.benchmarks.plan import BenchPlan
from apps.benchmarks.runner import run_bench
from apps.datasets.noise import NoiseModel
from apps.datasets.phantoms import PHANTOM_KINDS


class Command(BaseCommand):
    help = 'Reconstruct a phantom with every method at every view count and tabulate PSNR/SSIM'

    def add_arguments(self, parser):
        parser.add_argument('--plan', help='Plan file of key=value lines; flags override it')
        parser.add_argument('--phantom', choices=PHANTOM_KINDS, help='Phantom kind')
        parser.add_argument('--size', type=int, help='Phantom size')
        parser.add_argument('--phantom-seed', type=int, help='Phantom and noise seed')
        parser.add_argument('--views', type=parse_int_list, help='Comma separated view counts')
        parser.add_argument('--methods', type=parse_str_list, help='Comma separated methods (fbp, gift)')
        parser.add_argument('--seeds', type=parse_int_list, help='Comma separated optimizer seeds')
        parser.add_argument('--output', help='Output directory (default BENCH_OUTPUT_DIR)')
        parser.add_argument('--iters', type=int, help='Optimizer iterations per run')
        parser.add_argument('--lr', type=float, help='Adam learning rate')
        parser.add_argument('--gaussians', type=int, help='Gaussian count per run')
        parser.add_argument('--noise', help='none, gaussian:<sigma> or poisson:<I0>')
        parser.add_argument('--parallel', action='store_true', default=None, help='Run entries concurrently')
        parser.add_argument('--workers', type=int, help='Data-parallel workers (default GIFT_WORKERS)')
        parser.add_argument('--record', action='store_true', help='Store every row in the database')

    def handle(self, *args, **options):
        with exit_codes():
            plan = BenchPlan.from_file(options['plan']) if options['plan'] else BenchPlan()
            plan = plan.with_overrides(
                phantom=options['phantom'],
                size=options['size'],
                phantom_seed=options['phantom_seed'],
                views=options['views'],
                methods=options['methods'],
                seeds=options['seeds'],
                output=options['output'],
                iters=options['iters'],
                lr=options['lr'],
                gaussians=options['gaussians'],
                noise=NoiseModel.parse(options['noise']) if options['noise'] else None,
                parallel=options['parallel'],
            )

            def progress(run):
                self.stderr.write(str(run))

            report = run_bench(plan, workers=options['workers'], record=options['record'], progress=progress)

        self.stdout.write(f"{'method':<8}{'views':>6}{'psnr_db':>10}")
        for (method, views), value in report.summary().items():
            self.stdout.write(f"{method:<8}{views:>6}{value:>10.2f}")
        self.stderr.write(f"Metrics written to {report.csv_path}")

        if not report.succeeded:
            raise CommandError(f"All {len(report.runs)} benchmark runs failed", returncode=EXIT_IO)
        if report.failed:
            self.stderr.write(self.style.WARNING(f"{len(report.failed)} of {len(report.runs)} runs failed"))
