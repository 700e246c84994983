"""
The Gaussian reconstruction loop.

Each iteration renders the cloud, projects it, scores the composite loss,
pulls the loss gradient back through the projector adjoint and the
rasterizer VJP, and takes one Adam step. The best volume seen so far is
what gets returned, also when the run is interrupted.
"""
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from apps.core.exceptions import DivergenceError, GeometryError, ShapeMismatchError
from apps.core.grids import VolumeGrid
from apps.gaussians.neighborhood import neighborhood_for
from apps.gaussians.rasterizer import rasterize, rasterize_vjp
from apps.objective.losses import composite_loss, measurement_range
from apps.objective.metrics import psnr, ssim_metric
from apps.objective.ssim import SsimConfig
from apps.projector.operators import adjoint_array, forward_array

from .adam import OptimState, adam_step
from .config import ReconConfig
from .initialization import init_cloud, space_dims, target_dims

logger = logging.getLogger(__name__)

# sigma outside [e^-20, e^20] grid units is treated as a collapsed or exploded Gaussian
MAX_ABS_LOG_SCALE = 20.0


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    loss: float
    l1: float
    ssim_term: float
    tv: float
    elapsed_seconds: float


@dataclass(frozen=True)
class MetricSnapshot:
    iteration: int
    psnr_db: float
    ssim: float


@dataclass(eq=False)
class ReconResult:
    volume: VolumeGrid
    cloud: object
    loss_trace: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    interrupted: bool = False
    best_loss: float = math.inf


def has_converged(trace, window, tolerance):
    """Relative loss improvement over the last ``window`` iterations below ``tolerance``."""
    if len(trace) <= window:
        return False
    previous = trace[-window - 1].loss
    current = trace[-1].loss
    if previous == 0.0:
        return True
    return (previous - current) / abs(previous) < tolerance


def check_cloud(cloud, iteration):
    """Raise DivergenceError if an update left the cloud non-finite or degenerate."""
    for name, values in cloud.parameters().items():
        if not np.all(np.isfinite(values)):
            raise DivergenceError(f"Non-finite Gaussian {name} at iteration {iteration}", iteration)
    if np.any(np.abs(cloud.log_scales) > MAX_ABS_LOG_SCALE):
        raise DivergenceError(f"Degenerate Gaussian scales at iteration {iteration}", iteration)


def render(cloud, dims, geometry, workers, iteration):
    """Rasterize and project ``cloud``; numerical breakdown becomes a DivergenceError."""
    try:
        neighborhood = neighborhood_for(cloud, space_dims(dims))
        volume = rasterize(cloud, dims, neighborhood=neighborhood, workers=workers)
    except (GeometryError, ShapeMismatchError):
        raise
    except (ValueError, OverflowError) as exc:
        raise DivergenceError(f"Rendering failed at iteration {iteration}: {exc}", iteration) from exc
    predicted = forward_array(volume.data, geometry, workers)
    if not np.all(np.isfinite(predicted)):
        raise DivergenceError(f"Non-finite projection at iteration {iteration}", iteration)
    return neighborhood, volume, predicted


def reconstruct(sinogram, geometry, config=None, reference=None, progress=None, initial_cloud=None):
    """
    Fit a Gaussian cloud to ``sinogram`` and return a ReconResult.

    ``progress(iteration, loss, elapsed)`` is called every ``eval_every``
    iterations; with a ``reference`` volume a PSNR/SSIM snapshot is taken
    at the same cadence.
    """
    config = config or ReconConfig()
    config.clean()
    dims = target_dims(sinogram, geometry)
    workers = config.workers
    measured = sinogram.data
    ssim_config = SsimConfig(data_range=measurement_range(measured))

    cloud = initial_cloud.copy() if initial_cloud is not None else init_cloud(sinogram, geometry, config)
    trainable = [name for name in cloud.parameters() if name in config.trainable]
    state = OptimState.for_parameters(cloud.parameters(), trainable)

    trace, snapshots = [], []
    best_loss, best_volume, best_cloud = math.inf, None, None
    converged = interrupted = False
    started = time.perf_counter()
    logger.info(
        "Reconstructing %s from %d views with %d Gaussians (lr=%g, max_iters=%d)",
        dims, geometry.views, cloud.count, config.lr, config.max_iters,
    )

    iteration = 0
    try:
        for iteration in range(config.max_iters):
            check_cloud(cloud, iteration)
            neighborhood, volume, predicted = render(cloud, dims, geometry, workers, iteration)
            breakdown = composite_loss(volume.data, predicted, measured, config.weights, ssim_config)
            if not math.isfinite(breakdown.total):
                raise DivergenceError(f"Non-finite loss at iteration {iteration}", iteration)

            elapsed = time.perf_counter() - started
            trace.append(TraceRow(
                iteration=iteration,
                loss=breakdown.total,
                l1=breakdown.l1,
                ssim_term=breakdown.ssim_term,
                tv=breakdown.tv,
                elapsed_seconds=elapsed,
            ))
            if breakdown.total < best_loss:
                best_loss = breakdown.total
                best_volume = volume.clamp_nonnegative()
                best_cloud = cloud.copy()

            if iteration % config.eval_every == 0:
                logger.info("iteration %d loss %.6g (%.1fs)", iteration, breakdown.total, elapsed)
                if reference is not None:
                    current = volume.clamp_nonnegative()
                    snapshots.append(MetricSnapshot(
                        iteration=iteration,
                        psnr_db=psnr(current, reference),
                        ssim=ssim_metric(current, reference),
                    ))
                if progress is not None:
                    progress(iteration, breakdown.total, elapsed)

            if has_converged(trace, config.convergence_window, config.convergence_tol):
                converged = True
                logger.info("Converged at iteration %d", iteration)
                break

            upstream = breakdown.grad_volume + adjoint_array(breakdown.grad_predicted, geometry, workers)
            grads = rasterize_vjp(cloud, upstream, neighborhood=neighborhood, workers=workers).as_dict()
            adam_step(state, cloud, {name: grads[name] for name in trainable}, config.lr, iteration)
    except KeyboardInterrupt:
        interrupted = True
        logger.warning("Interrupted at iteration %d; keeping the best volume so far", iteration)
    except DivergenceError as exc:
        logger.warning("Diverged at iteration %d", exc.iteration)
        exc.best_volume = best_volume
        exc.best_cloud = best_cloud
        exc.loss_trace = trace
        raise

    if best_volume is None:
        best_volume = rasterize(cloud, dims, workers=workers).clamp_nonnegative()
        best_cloud = cloud.copy()

    return ReconResult(
        volume=best_volume,
        cloud=best_cloud,
        loss_trace=trace,
        snapshots=snapshots,
        iterations=len(trace),
        converged=converged,
        interrupted=interrupted,
        best_loss=best_loss,
    )


def smoothed_losses(trace, window=100):
    """Trailing moving average of the loss trace."""
    losses = np.array([row.loss for row in trace])
    if losses.size == 0:
        return losses
    window = max(1, min(window, losses.size))
    kernel = np.ones(window) / window
    return np.convolve(losses, kernel, mode='valid')
