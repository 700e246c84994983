import io
import math
import tempfile
import time
from pathlib import Path
from unittest import mock

import factory
import numpy as np
import pytest
from django.core.exceptions import ValidationError
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase

from apps.core.exceptions import DataIOError, DivergenceError
from apps.core.grids import VolumeGrid
from apps.datasets.formats import read_sinogram, read_volume, write_volume
from apps.datasets.metrics_csv import METRIC_COLUMNS, read_metrics_csv
from apps.datasets.noise import NoiseModel

from .models import BenchmarkRun
from .plan import DEFAULT_VIEWS, BenchPlan
from .runner import run_bench


class BenchmarkRunFactory(factory.django.DjangoModelFactory):
    class Meta:
        model = BenchmarkRun

    method = 'fbp'
    phantom = 'shepp-logan-128'
    views = factory.Iterator(DEFAULT_VIEWS)
    psnr_db = factory.Sequence(lambda n: 20.0 + n)
    ssim = 0.75
    iters = 0
    wall_seconds = 0.5
    seed = 0


def run(*args, **kwargs):
    out, err = io.StringIO(), io.StringIO()
    call_command(*args, stdout=out, stderr=err, **kwargs)
    return out.getvalue(), err.getvalue()


class TempDirMixin:

    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()
        super().tearDown()


class BenchmarkRunModelTests(TestCase):

    def test_str(self):
        run_row = BenchmarkRunFactory(views=60, psnr_db=31.234)
        self.assertEqual(str(run_row), 'fbp @ 60 views on shepp-logan-128: 31.23 dB')
        failed = BenchmarkRunFactory(psnr_db=None, ssim=None, error='boom')
        self.assertIn('failed', str(failed))

    def test_infinite_psnr_is_stored_as_null(self):
        run_row = BenchmarkRun.from_metrics('gift', 'p', 60, math.inf, 1.0, 10, 1.0, 0)
        run_row.save()
        run_row.refresh_from_db()
        self.assertIsNone(run_row.psnr_db)
        self.assertEqual(run_row.as_metrics_row()['psnr_db'], 'inf')

    def test_metrics_row_columns(self):
        row = BenchmarkRunFactory(views=90, psnr_db=25.5, seed=3).as_metrics_row()
        self.assertEqual(tuple(row), METRIC_COLUMNS)
        self.assertEqual(row['psnr_db'], '25.500000')
        self.assertEqual(row['views'], 90)

    def test_failed_row_has_empty_metrics(self):
        row = BenchmarkRunFactory(psnr_db=None, ssim=None, error='boom').as_metrics_row()
        self.assertEqual(row['psnr_db'], '')
        self.assertEqual(row['ssim'], '')

    def test_ordering(self):
        BenchmarkRunFactory.create_batch(4)
        self.assertEqual(list(BenchmarkRun.objects.values_list('views', flat=True)), sorted(DEFAULT_VIEWS))


class BenchPlanTests(TempDirMixin, SimpleTestCase):

    def test_defaults(self):
        plan = BenchPlan()
        plan.clean()
        self.assertEqual(plan.views, (60, 90, 120, 180))
        self.assertEqual(plan.methods, ('fbp', 'gift'))
        self.assertEqual(len(plan.entries()), 8)

    def test_fbp_runs_once_per_view_count(self):
        plan = BenchPlan(seeds=(0, 1, 2))
        entries = plan.entries()
        self.assertEqual(len(entries), 4 * (1 + 3))
        self.assertEqual(entries[:4], [(60, 'fbp', 0), (60, 'gift', 0), (60, 'gift', 1), (60, 'gift', 2)])

    def test_parse_file(self):
        path = self.tmp / 'plan.txt'
        path.write_text(
            "# desk-scale sweep\n"
            "phantom = lesion\n"
            "size = 64   # pixels\n"
            "views = 30, 60\n"
            "methods = FBP\n"
            "noise = gaussian:0.01\n"
            "gaussians = auto\n"
            "parallel = yes\n"
        )
        plan = BenchPlan.from_file(path)
        self.assertEqual(plan.phantom, 'lesion')
        self.assertEqual(plan.size, 64)
        self.assertEqual(plan.views, (30, 60))
        self.assertEqual(plan.methods, ('fbp',))
        self.assertEqual(plan.noise, NoiseModel('gaussian', 0.01))
        self.assertIsNone(plan.gaussians)
        self.assertTrue(plan.parallel)

    def test_parse_reports_every_bad_line(self):
        with self.assertRaises(ValidationError) as ctx:
            BenchPlan.parse("colour = red\nsize = big\nviews = 60\n")
        self.assertEqual(len(ctx.exception.messages), 2)
        self.assertIn('<plan>:1', ctx.exception.messages[0])

    def test_invalid_values(self):
        for overrides in ({'views': ()}, {'methods': ('sart',)}, {'size': 8}, {'lr': 0.0}, {'seeds': ()}):
            with self.assertRaises(ValidationError):
                BenchPlan().with_overrides(**overrides)

    def test_overrides_skip_none(self):
        plan = BenchPlan(size=32).with_overrides(size=None, views=(10,))
        self.assertEqual(plan.size, 32)
        self.assertEqual(plan.views, (10,))

    def test_missing_plan_file(self):
        with self.assertRaises(DataIOError):
            BenchPlan.from_file(self.tmp / 'absent.txt')


class PhantomCommandTests(TempDirMixin, SimpleTestCase):

    def test_writes_volume(self):
        out = self.tmp / 'p.vol'
        run('phantom', '--kind', 'shepp-logan', '--size', '128', '--out', str(out))
        self.assertEqual(read_volume(out).dims, (1, 128, 128))

    def test_undersized_is_usage_error(self):
        with self.assertRaises(CommandError) as ctx:
            run('phantom', '--size', '8', '--out', str(self.tmp / 'p.vol'))
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('16', str(ctx.exception))

    def test_same_seed_same_file(self):
        first, second = self.tmp / 'a.vol', self.tmp / 'b.vol'
        for path in (first, second):
            run('phantom', '--kind', 'lesion', '--size', '48', '--seed', '5', '--out', str(path))
        self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_pgm_preview(self):
        pgm = self.tmp / 'p.pgm'
        run('phantom', '--size', '32', '--out', str(self.tmp / 'p.vol'), '--pgm', str(pgm))
        self.assertTrue(pgm.read_bytes().startswith(b'P5'))

    def test_unwritable_output_is_io_error(self):
        with self.assertRaises(CommandError) as ctx:
            run('phantom', '--size', '32', '--out', str(self.tmp / 'missing' / 'p.vol'))
        self.assertEqual(ctx.exception.returncode, 1)


class ProjectCommandTests(TempDirMixin, SimpleTestCase):

    def setUp(self):
        super().setUp()
        self.phantom = self.tmp / 'p.vol'
        run('phantom', '--size', '64', '--out', str(self.phantom))

    def test_detector_rule(self):
        out = self.tmp / 's.sino'
        run('project', '--in', str(self.phantom), '--views', '60', '--out', str(out))
        sinogram, angles = read_sinogram(out)
        self.assertEqual(sinogram.dims, (1, 60, 92))
        self.assertEqual(len(angles), 60)
        self.assertEqual(angles[0], 0.0)

    def test_zero_views_is_usage_error(self):
        with self.assertRaises(CommandError) as ctx:
            run('project', '--in', str(self.phantom), '--views', '0', '--out', str(self.tmp / 's.sino'))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_bad_noise_is_usage_error(self):
        with self.assertRaises(CommandError) as ctx:
            run('project', '--in', str(self.phantom), '--views', '8', '--noise', 'speckle:1',
                '--out', str(self.tmp / 's.sino'))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_reproducible(self):
        paths = [self.tmp / 'a.sino', self.tmp / 'b.sino', self.tmp / 'c.sino']
        run('project', '--in', str(self.phantom), '--views', '12', '--out', str(paths[0]))
        run('project', '--in', str(self.phantom), '--views', '12', '--out', str(paths[1]), '--workers', '3')
        self.assertEqual(paths[0].read_bytes(), paths[1].read_bytes())
        run('project', '--in', str(self.phantom), '--views', '12', '--noise', 'poisson:1e5', '--seed', '4',
            '--out', str(paths[2]))
        self.assertNotEqual(paths[0].read_bytes(), paths[2].read_bytes())


class ReconstructCommandTests(TempDirMixin, SimpleTestCase):

    def setUp(self):
        super().setUp()
        phantom = self.tmp / 'p.vol'
        self.sinogram = self.tmp / 's.sino'
        run('phantom', '--size', '32', '--out', str(phantom))
        run('project', '--in', str(phantom), '--views', '20', '--out', str(self.sinogram))

    def test_fbp(self):
        out = self.tmp / 'fbp.vol'
        run('reconstruct', '--in', str(self.sinogram), '--method', 'fbp', '--out', str(out))
        volume = read_volume(out)
        self.assertEqual(volume.dims, (1, 32, 32))
        self.assertGreaterEqual(volume.data.min(), 0.0)

    def test_gift_writes_volume_and_trace(self):
        out, trace = self.tmp / 'gift.vol', self.tmp / 'trace.csv'
        _, err = run('reconstruct', '--in', str(self.sinogram), '--method', 'gift', '--iters', '10',
                     '--gaussians', '64', '--eval-every', '5', '--out', str(out), '--trace', str(trace))
        self.assertEqual(read_volume(out).dims, (1, 32, 32))
        self.assertEqual(len(trace.read_text().splitlines()), 11)
        self.assertIn('iter      0', err)
        self.assertIn('iter      5', err)

    def test_missing_input_is_io_error(self):
        missing = self.tmp / 'absent.sino'
        with self.assertRaises(CommandError) as ctx:
            run('reconstruct', '--in', str(missing), '--method', 'fbp', '--out', str(self.tmp / 'o.vol'))
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn(str(missing), str(ctx.exception))

    def test_trace_requires_gift(self):
        with self.assertRaises(CommandError) as ctx:
            run('reconstruct', '--in', str(self.sinogram), '--method', 'fbp', '--out', str(self.tmp / 'o.vol'),
                '--trace', str(self.tmp / 't.csv'))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_divergence_writes_best_volume(self):
        best = VolumeGrid(np.full((1, 32, 32), 0.25))
        error = DivergenceError('Non-finite loss at iteration 7', 7, best_volume=best)
        out = self.tmp / 'diverged.vol'
        with mock.patch('apps.benchmarks.management.commands.reconstruct.reconstruct', side_effect=error):
            with self.assertRaises(CommandError) as ctx:
                run('reconstruct', '--in', str(self.sinogram), '--out', str(out))
        self.assertEqual(ctx.exception.returncode, 3)
        self.assertIn('iteration 7', str(ctx.exception))
        np.testing.assert_array_equal(read_volume(out).data, best.data)


    def test_divergent_learning_rate_exits_three_with_best_volume(self):
        out, trace = self.tmp / 'diverged.vol', self.tmp / 'trace.csv'
        with self.assertRaises(CommandError) as ctx:
            run('reconstruct', '--in', str(self.sinogram), '--lr', '1e6', '--gaussians', '16', '--iters', '20',
                '--out', str(out), '--trace', str(trace))
        self.assertEqual(ctx.exception.returncode, 3)
        self.assertIn('iteration', str(ctx.exception))
        volume = read_volume(out)
        self.assertEqual(volume.dims, (1, 32, 32))
        self.assertGreaterEqual(volume.data.min(), 0.0)
        self.assertGreaterEqual(len(trace.read_text().splitlines()), 2)

    def test_nonpositive_size_is_usage_error(self):
        for size in ('0', '-4'):
            with self.assertRaises(CommandError) as ctx:
                run('reconstruct', '--in', str(self.sinogram), '--method', 'fbp', '--size', size,
                    '--out', str(self.tmp / 'o.vol'))
            self.assertEqual(ctx.exception.returncode, 2)
            self.assertIn('--size', str(ctx.exception))

    def test_hann_window(self):
        ram_lak, hann = self.tmp / 'r.vol', self.tmp / 'h.vol'
        run('reconstruct', '--in', str(self.sinogram), '--method', 'fbp', '--out', str(ram_lak))
        run('reconstruct', '--in', str(self.sinogram), '--method', 'fbp', '--window', 'hann', '--out', str(hann))
        smooth, sharp = read_volume(hann).data, read_volume(ram_lak).data
        self.assertEqual(smooth.shape, sharp.shape)
        self.assertLess(np.abs(np.diff(smooth, axis=2)).sum(), np.abs(np.diff(sharp, axis=2)).sum())

    def test_window_requires_fbp(self):
        with self.assertRaises(CommandError) as ctx:
            run('reconstruct', '--in', str(self.sinogram), '--method', 'gift', '--window', 'hann',
                '--out', str(self.tmp / 'o.vol'))
        self.assertEqual(ctx.exception.returncode, 2)


class PipelineTests(TempDirMixin, TestCase):

    def setUp(self):
        super().setUp()
        self.phantom = self.tmp / 'p.vol'
        self.sinogram = self.tmp / 's.sino'
        run('phantom', '--size', '64', '--out', str(self.phantom))
        run('project', '--in', str(self.phantom), '--views', '90', '--out', str(self.sinogram))

    def test_ambiguous_size_asks_for_size_flag(self):
        with self.assertRaises(CommandError) as ctx:
            run('reconstruct', '--in', str(self.sinogram), '--method', 'fbp', '--out', str(self.tmp / 'o.vol'))
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('64 or 65', str(ctx.exception))
        self.assertIn('--size', str(ctx.exception))

    def test_phantom_project_reconstruct_evaluate(self):
        recon, csv = self.tmp / 'fbp.vol', self.tmp / 'metrics.csv'
        run('reconstruct', '--in', str(self.sinogram), '--method', 'fbp', '--size', '64', '--out', str(recon))
        self.assertEqual(read_volume(recon).dims, (1, 64, 64))
        run('evaluate', '--recon', str(recon), '--ref', str(self.phantom), '--out-csv', str(csv),
            '--method', 'fbp', '--views', '90')
        row = read_metrics_csv(csv)[0]
        self.assertGreater(float(row['psnr_db']), 15.0)
        self.assertGreater(float(row['ssim']), 0.3)


class EvaluateCommandTests(TempDirMixin, TestCase):

    def setUp(self):
        super().setUp()
        image = np.random.default_rng(0).random((1, 24, 24))
        image[0, 0, 0], image[0, 0, 1] = 0.0, 1.0
        self.reference = VolumeGrid(image.astype(np.float32))
        self.ref_path = self.tmp / 'ref.vol'
        write_volume(self.ref_path, self.reference)
        self.csv = self.tmp / 'metrics.csv'

    def test_identical_volumes(self):
        out, _ = run('evaluate', '--recon', str(self.ref_path), '--ref', str(self.ref_path),
                     '--out-csv', str(self.csv))
        rows = read_metrics_csv(self.csv)
        self.assertEqual(rows[0]['psnr_db'], 'inf')
        self.assertEqual(float(rows[0]['ssim']), 1.0)
        self.assertIn('psnr_db=inf', out)
        self.assertEqual(self.csv.read_text().splitlines()[0], ','.join(METRIC_COLUMNS))

    def test_constant_shift_is_twenty_db(self):
        shifted = self.tmp / 'shifted.vol'
        write_volume(shifted, VolumeGrid(self.reference.data + np.float32(0.1)))
        run('evaluate', '--recon', str(shifted), '--ref', str(self.ref_path), '--out-csv', str(self.csv),
            '--method', 'fbp', '--views', '60')
        row = read_metrics_csv(self.csv)[0]
        self.assertAlmostEqual(float(row['psnr_db']), 20.0, places=3)
        self.assertEqual(row['method'], 'fbp')
        self.assertEqual(row['phantom'], 'ref')

    def test_rows_append(self):
        for _ in range(2):
            run('evaluate', '--recon', str(self.ref_path), '--ref', str(self.ref_path), '--out-csv', str(self.csv))
        self.assertEqual(len(read_metrics_csv(self.csv)), 2)

    def test_shape_mismatch_is_usage_error(self):
        other = self.tmp / 'other.vol'
        write_volume(other, VolumeGrid.zeros((1, 12, 12)))
        with self.assertRaises(CommandError) as ctx:
            run('evaluate', '--recon', str(other), '--ref', str(self.ref_path), '--out-csv', str(self.csv))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_record(self):
        run('evaluate', '--recon', str(self.ref_path), '--ref', str(self.ref_path), '--out-csv', str(self.csv),
            '--record', '--phantom', 'noise-24')
        stored = BenchmarkRun.objects.get()
        self.assertEqual(stored.phantom, 'noise-24')
        self.assertIsNone(stored.psnr_db)
        self.assertEqual(stored.method, 'external')


class BenchCommandTests(TempDirMixin, TestCase):

    def bench(self, *extra):
        return run('bench', '--size', '32', '--views', '8,16', '--iters', '3', '--gaussians', '32',
                   '--output', str(self.tmp), *extra)

    def numeric_fields(self):
        return [
            {key: row[key] for key in METRIC_COLUMNS if key != 'wall_seconds'}
            for row in read_metrics_csv(self.tmp / 'metrics.csv')
        ]

    def test_cross_product(self):
        out, _ = self.bench()
        rows = read_metrics_csv(self.tmp / 'metrics.csv')
        self.assertEqual([(row['method'], row['views']) for row in rows],
                         [('fbp', '8'), ('gift', '8'), ('fbp', '16'), ('gift', '16')])
        self.assertEqual(rows[1]['iters'], '3')
        self.assertEqual(len(list((self.tmp / 'gallery').glob('*.pgm'))), 4)
        self.assertIn('gift', out)

    def test_rerun_is_reproducible(self):
        self.bench()
        first = self.numeric_fields()
        self.bench('--parallel', '--workers', '2')
        self.assertEqual(self.numeric_fields(), first)

    def test_record(self):
        self.bench('--methods', 'fbp', '--record')
        self.assertEqual(BenchmarkRun.objects.count(), 2)
        self.assertTrue(all(run_row.psnr_db > 0 for run_row in BenchmarkRun.objects.all()))

    def test_plan_file_with_flag_override(self):
        plan = self.tmp / 'plan.txt'
        plan.write_text("views = 8\nmethods = fbp\nsize = 64\n")
        run('bench', '--plan', str(plan), '--size', '32', '--output', str(self.tmp))
        rows = read_metrics_csv(self.tmp / 'metrics.csv')
        self.assertEqual(len(rows), 1)
        self.assertEqual(rows[0]['phantom'], 'shepp-logan-32')

    def test_partial_failure_keeps_going(self):
        with mock.patch('apps.benchmarks.runner.reconstruct', side_effect=DivergenceError('boom', 0)):
            _, err = self.bench()
        rows = read_metrics_csv(self.tmp / 'metrics.csv')
        self.assertEqual([row['psnr_db'] == '' for row in rows], [False, True, False, True])
        self.assertIn('2 of 4 runs failed', err)

    def test_all_failed(self):
        with mock.patch('apps.benchmarks.runner.reconstruct', side_effect=DivergenceError('boom', 0)):
            with self.assertRaises(CommandError) as ctx:
                self.bench('--methods', 'gift')
        self.assertEqual(ctx.exception.returncode, 1)

    def test_invalid_plan_is_usage_error(self):
        with self.assertRaises(CommandError) as ctx:
            self.bench('--methods', 'sart')
        self.assertEqual(ctx.exception.returncode, 2)


@pytest.mark.slow
class BenchTrendTests(TempDirMixin, TestCase):

    def test_default_plan_reproduces_the_view_trend(self):
        plan = BenchPlan(output=str(self.tmp))
        started = time.perf_counter()
        summary = run_bench(plan).summary()
        elapsed = time.perf_counter() - started

        gift = [summary[('gift', views)] for views in plan.views]
        for views, value in zip(plan.views, gift):
            baseline = summary[('fbp', views)]
            self.assertGreaterEqual(value, baseline + 10.0, f"{views} views: gift {value:.2f} vs fbp {baseline:.2f} dB")
        for fewer, more in zip(gift, gift[1:]):
            self.assertGreaterEqual(more, fewer - 0.5, f"gift PSNR by views: {gift}")
        self.assertLessEqual(elapsed, 15 * 60)
