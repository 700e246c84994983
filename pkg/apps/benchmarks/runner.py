"""
Benchmark sweep over a BenchPlan.

Every (views, method, seed) entry reconstructs the same phantom from its
own simulated sinogram and is scored against the phantom. Failures stay
in the table as error rows instead of aborting the sweep.
"""
import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError

from apps.core.conf import resolve_workers
from apps.core.exceptions import DataIOError, ReconstructionError
from apps.core.geometry import make_geometry
from apps.core.parallel import ordered_map
from apps.datasets.images import write_pgm
from apps.datasets.metrics_csv import write_metrics_csv
from apps.datasets.noise import add_noise
from apps.datasets.phantoms import make_phantom
from apps.objective.metrics import psnr, ssim_metric
from apps.optimizer.config import ReconConfig
from apps.optimizer.reconstruction import reconstruct
from apps.projector.fbp import fbp
from apps.projector.operators import radon_forward

from .models import BenchmarkRun
from .plan import FBP

logger = logging.getLogger(__name__)

METRICS_FILE = 'metrics.csv'
GALLERY_DIR = 'gallery'


@dataclass
class BenchReport:
    runs: list = field(default_factory=list)
    csv_path: Path = None
    gallery: list = field(default_factory=list)

    @property
    def succeeded(self):
        return [run for run in self.runs if run.succeeded]

    @property
    def failed(self):
        return [run for run in self.runs if not run.succeeded]

    def summary(self):
        """Mean PSNR per (method, views) over the successful seeds."""
        grouped = defaultdict(list)
        for run in self.succeeded:
            grouped[(run.method, run.views)].append(np.inf if run.psnr_db is None else run.psnr_db)
        return {key: float(np.mean(values)) for key, values in sorted(grouped.items())}


def simulate(phantom, views, noise, seed, workers=None):
    geometry = make_geometry(views, phantom.slice_dims)
    sinogram = add_noise(radon_forward(phantom, geometry, workers), noise, seed=seed)
    return geometry, sinogram


def run_entry(plan, phantom, entry, workers=None, gallery_dir=None):
    """Reconstruct and score one entry; never raises for reconstruction failures."""
    views, method, seed = entry
    started = time.perf_counter()
    iterations = 0
    try:
        geometry, sinogram = simulate(phantom, views, plan.noise, plan.phantom_seed, workers)
        if method == FBP:
            volume = fbp(sinogram, geometry, workers=workers)
        else:
            config = ReconConfig(
                gaussian_count=plan.gaussians,
                lr=plan.lr,
                max_iters=plan.iters,
                seed=seed,
                workers=workers,
            )
            result = reconstruct(sinogram, geometry, config, reference=phantom)
            volume, iterations = result.volume, result.iterations
        wall_seconds = time.perf_counter() - started

        if gallery_dir is not None:
            window = (float(phantom.data.min()), float(phantom.data.max()))
            write_pgm(Path(gallery_dir) / f"{method}_{views}v_seed{seed}.pgm", volume, window=window)
        run = BenchmarkRun.from_metrics(
            method, plan.phantom_label, views, psnr(volume, phantom), ssim_metric(volume, phantom),
            iterations, wall_seconds, seed,
        )
    except (ReconstructionError, ValidationError) as exc:
        logger.warning("Benchmark entry %s failed: %s", entry, exc)
        run = BenchmarkRun.from_metrics(
            method, plan.phantom_label, views, None, None, iterations, time.perf_counter() - started, seed,
            error=str(exc),
        )
    logger.info("%s", run)
    return run


def run_bench(plan, workers=None, record=False, progress=None):
    """
    Run every plan entry, write the metrics CSV and PGM gallery under
    ``plan.output`` and return a BenchReport.

    Entries run one after another unless ``plan.parallel`` is set, in which
    case they share a thread pool and each entry's kernels run single-threaded.
    """
    plan.clean()
    output = Path(plan.output)
    gallery_dir = output / GALLERY_DIR
    try:
        gallery_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataIOError(gallery_dir, exc.strerror or str(exc)) from exc

    phantom = make_phantom(plan.phantom, plan.size, seed=plan.phantom_seed)
    entries = plan.entries()
    logger.info("Benchmark %s: %d entries", plan.phantom_label, len(entries))

    def run(entry):
        inner_workers = 1 if plan.parallel else workers
        result = run_entry(plan, phantom, entry, workers=inner_workers, gallery_dir=gallery_dir)
        if progress is not None:
            progress(result)
        return result

    pool_size = max(2, resolve_workers(workers)) if plan.parallel else 1
    runs = ordered_map(run, entries, workers=pool_size)

    csv_path = output / METRICS_FILE
    write_metrics_csv(csv_path, [run.as_metrics_row() for run in runs], append=False)
    if record:
        BenchmarkRun.objects.bulk_create(runs)

    return BenchReport(
        runs=runs,
        csv_path=csv_path,
        gallery=sorted(gallery_dir.glob('*.pgm')),
    )
