"""
Exception hierarchy shared by every reconstruction app.
"""


class ReconstructionError(Exception):
    """Base class for all errors raised by the reconstruction engine."""


class GeometryError(ReconstructionError, ValueError):
    """Invalid or degenerate acquisition geometry."""


class ShapeMismatchError(ReconstructionError, ValueError):
    """Two arrays, grids or geometries that must agree do not."""


class DivergenceError(ReconstructionError):
    """
    Non-finite loss or gradient during optimization.

    Carries the iteration at which it happened and, when one exists,
    the best volume seen before it.
    """

    def __init__(self, message, iteration, best_volume=None, best_cloud=None, loss_trace=None):
        super().__init__(message)
        self.iteration = iteration
        self.best_volume = best_volume
        self.best_cloud = best_cloud
        self.loss_trace = loss_trace or []


class DataFormatError(ReconstructionError):
    """A volume or sinogram file does not follow its binary format."""


class BadMagicError(DataFormatError):
    pass


class UnsupportedVersionError(DataFormatError):
    pass


class UnsupportedDtypeError(DataFormatError):
    pass


class CorruptHeaderError(DataFormatError):
    pass


class TruncatedPayloadError(DataFormatError):
    pass


class DataIOError(ReconstructionError, OSError):
    """Reading or writing a data file failed at the operating-system level."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason
