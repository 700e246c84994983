"""
Ordered data-parallel map used by the projector and rasterizer kernels.

Work is split into chunks whose boundaries never depend on the worker
count; results come back in chunk order, so any reduction done by the
caller in that order is reproducible for every worker count.
"""
import logging
from concurrent.futures import ThreadPoolExecutor

from .conf import resolve_workers

logger = logging.getLogger(__name__)


def chunk_bounds(total, chunk_size):
    """Half-open ``(start, stop)`` ranges covering ``range(total)``."""
    chunk_size = max(1, int(chunk_size))
    return [(start, min(start + chunk_size, total)) for start in range(0, total, chunk_size)]


def ordered_map(fn, items, workers=None):
    """
    Apply ``fn`` to every item and return the results in input order.

    numpy and scipy.sparse release the GIL inside their kernels, so a
    thread pool is enough to overlap chunk work.
    """
    items = list(items)
    workers = resolve_workers(workers)
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]

    logger.debug("Dispatching %d chunks to %d workers", len(items), workers)
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as executor:
        return list(executor.map(fn, items))


def ordered_sum(parts, out):
    """Accumulate ``parts`` into ``out`` strictly in list order."""
    for part in parts:
        out += part
    return out
