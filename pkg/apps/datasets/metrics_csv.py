"""
CSV outputs: benchmark metric rows and per-iteration loss traces.
"""
import csv
import math
from pathlib import Path

from apps.core.exceptions import DataIOError

METRIC_COLUMNS = ('method', 'phantom', 'views', 'psnr_db', 'ssim', 'iters', 'wall_seconds', 'seed')
TRACE_COLUMNS = ('iteration', 'loss', 'l1', 'ssim_term', 'tv', 'elapsed_seconds')


def format_float(value, digits=6):
    if value is None:
        return ''
    if math.isinf(value):
        return 'inf' if value > 0 else '-inf'
    return f"{value:.{digits}f}"


def metrics_row(method, phantom, views, psnr_db, ssim, iters, wall_seconds, seed):
    return {
        'method': method,
        'phantom': phantom,
        'views': int(views),
        'psnr_db': format_float(psnr_db),
        'ssim': format_float(ssim),
        'iters': int(iters),
        'wall_seconds': format_float(wall_seconds, 3),
        'seed': int(seed),
    }


def write_metrics_csv(path, rows, append=True):
    """Append ``rows`` (dicts keyed by METRIC_COLUMNS), writing the header for new files."""
    path = Path(path)
    new_file = not append or not path.exists() or path.stat().st_size == 0
    try:
        with path.open('w' if not append else 'a', newline='', encoding='utf-8') as handle:
            writer = csv.DictWriter(handle, fieldnames=METRIC_COLUMNS)
            if new_file:
                writer.writeheader()
            for row in rows:
                writer.writerow({column: row[column] for column in METRIC_COLUMNS})
    except OSError as exc:
        raise DataIOError(path, exc.strerror or str(exc)) from exc


def read_metrics_csv(path):
    try:
        with Path(path).open(newline='', encoding='utf-8') as handle:
            return list(csv.DictReader(handle))
    except OSError as exc:
        raise DataIOError(path, exc.strerror or str(exc)) from exc


def write_trace_csv(path, trace):
    try:
        with Path(path).open('w', newline='', encoding='utf-8') as handle:
            writer = csv.writer(handle)
            writer.writerow(TRACE_COLUMNS)
            for row in trace:
                writer.writerow([
                    row.iteration,
                    repr(row.loss),
                    repr(row.l1),
                    repr(row.ssim_term),
                    repr(row.tv),
                    format_float(row.elapsed_seconds, 3),
                ])
    except OSError as exc:
        raise DataIOError(path, exc.strerror or str(exc)) from exc
