"""
Models for the benchmarks app.
Stores one row per benchmark or evaluation run.
"""
import math

from django.db import models
from django.utils.translation import gettext_lazy as _

from apps.datasets.metrics_csv import metrics_row


class BenchmarkRun(models.Model):
    """
    Result of reconstructing one phantom with one method at one view count.
    A failed run keeps its error message and has no metrics.
    """
    METHOD_CHOICES = [
        ('fbp', 'Filtered Back Projection'),
        ('gift', 'Gaussian Reconstruction'),
        ('external', 'External Reconstruction'),
    ]

    method = models.CharField(_('Method'), max_length=20, choices=METHOD_CHOICES)
    phantom = models.CharField(_('Phantom'), max_length=100)
    views = models.PositiveIntegerField(_('Views'))

    # Metrics (PSNR is NULL when infinite or when the run failed)
    psnr_db = models.FloatField(_('PSNR (dB)'), null=True, blank=True)
    ssim = models.FloatField(_('SSIM'), null=True, blank=True)
    iters = models.PositiveIntegerField(_('Iterations'), default=0)
    wall_seconds = models.FloatField(_('Wall Seconds'), default=0.0)
    seed = models.PositiveBigIntegerField(_('Seed'), default=0)

    error = models.TextField(_('Error'), blank=True)

    created_at = models.DateTimeField(_('Created At'), auto_now_add=True)

    class Meta:
        db_table = 'benchmark_runs'
        verbose_name = _('Benchmark Run')
        verbose_name_plural = _('Benchmark Runs')
        ordering = ['method', 'views', 'seed']
        indexes = [
            models.Index(fields=['method', 'views'], name='benchmark_r_method_5b1c2e_idx'),
            models.Index(fields=['phantom', 'created_at'], name='benchmark_r_phantom_9d4a7f_idx'),
        ]

    def __str__(self):
        if self.error:
            return f"{self.method} @ {self.views} views on {self.phantom}: failed"
        return f"{self.method} @ {self.views} views on {self.phantom}: {self.psnr_display} dB"

    @property
    def succeeded(self):
        return not self.error

    @property
    def psnr_display(self):
        if self.psnr_db is None:
            return 'inf' if self.succeeded else ''
        return f"{self.psnr_db:.2f}"

    @classmethod
    def from_metrics(cls, method, phantom, views, psnr_db, ssim, iters, wall_seconds, seed, error=''):
        """Build an unsaved run; infinite PSNR is stored as NULL."""
        if psnr_db is not None and not math.isfinite(psnr_db):
            psnr_db = None
        return cls(
            method=method,
            phantom=phantom,
            views=views,
            psnr_db=psnr_db,
            ssim=ssim,
            iters=iters,
            wall_seconds=wall_seconds,
            seed=seed,
            error=error,
        )

    def as_metrics_row(self):
        """The CSV row for this run."""
        psnr_db = self.psnr_db
        if psnr_db is None and self.succeeded:
            psnr_db = math.inf
        return metrics_row(
            self.method, self.phantom, self.views, psnr_db, self.ssim, self.iters, self.wall_seconds, self.seed,
        )
