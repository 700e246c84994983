"""
Binary volume and sinogram files.

Both share a 24-byte little-endian header: 4-byte magic, u32 version,
4-byte dtype tag and three u32 dims. Sinogram files follow the header
with one f64 angle per view. The payload is row-major little-endian f32.
"""
import logging
import struct
from pathlib import Path

import numpy as np

from apps.core.exceptions import (
    BadMagicError, CorruptHeaderError, DataIOError, TruncatedPayloadError,
    UnsupportedDtypeError, UnsupportedVersionError,
)
from apps.core.grids import Sinogram, VolumeGrid

logger = logging.getLogger(__name__)

HEADER = struct.Struct('<4sI4s3I')
FORMAT_VERSION = 1
DTYPE_TAG = b'f4le'
VOLUME_MAGIC = b'MORE'
SINOGRAM_MAGIC = b'SINO'
PAYLOAD_DTYPE = np.dtype('<f4')
ANGLE_DTYPE = np.dtype('<f8')


def _read_bytes(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataIOError(path, exc.strerror or str(exc)) from exc


def _write_bytes(path, payload):
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise DataIOError(path, exc.strerror or str(exc)) from exc


def _parse_header(blob, magic, path):
    if len(blob) < HEADER.size:
        raise CorruptHeaderError(f"{path}: truncated header ({len(blob)} of {HEADER.size} bytes)")
    found, version, dtype_tag, *dims = HEADER.unpack_from(blob)
    if found != magic:
        raise BadMagicError(f"{path}: bad magic {found!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported format version {version}")
    if dtype_tag != DTYPE_TAG:
        raise UnsupportedDtypeError(f"{path}: unsupported dtype tag {dtype_tag!r}")
    if min(dims) < 1:
        raise CorruptHeaderError(f"{path}: invalid dims {tuple(dims)}")
    return tuple(dims)


def _payload(blob, offset, dims, path):
    expected = int(np.prod(dims)) * PAYLOAD_DTYPE.itemsize
    available = len(blob) - offset
    if available < expected:
        raise TruncatedPayloadError(f"{path}: truncated payload ({available} of {expected} bytes)")
    if available > expected:
        raise CorruptHeaderError(f"{path}: {available - expected} unexpected trailing bytes")
    return np.frombuffer(blob, dtype=PAYLOAD_DTYPE, count=int(np.prod(dims)), offset=offset).reshape(dims)


def encode_volume(grid):
    header = HEADER.pack(VOLUME_MAGIC, FORMAT_VERSION, DTYPE_TAG, *grid.dims)
    return header + grid.data.astype(PAYLOAD_DTYPE).tobytes()


def write_volume(path, grid):
    _write_bytes(path, encode_volume(grid))
    logger.debug("Wrote volume %s to %s", grid.dims, path)


def read_volume(path):
    blob = _read_bytes(path)
    dims = _parse_header(blob, VOLUME_MAGIC, path)
    return VolumeGrid(_payload(blob, HEADER.size, dims, path).astype(np.float64))


def encode_sinogram(sinogram, angles):
    angles = np.asarray(angles, dtype=ANGLE_DTYPE)
    if angles.shape != (sinogram.views,):
        raise CorruptHeaderError(f"Expected {sinogram.views} angles, got {angles.size}")
    header = HEADER.pack(SINOGRAM_MAGIC, FORMAT_VERSION, DTYPE_TAG, *sinogram.dims)
    return header + angles.tobytes() + sinogram.data.astype(PAYLOAD_DTYPE).tobytes()


def write_sinogram(path, sinogram, angles):
    _write_bytes(path, encode_sinogram(sinogram, angles))
    logger.debug("Wrote sinogram %s to %s", sinogram.dims, path)


def read_sinogram(path):
    """Return ``(Sinogram, angles)`` with angles as a tuple of floats."""
    blob = _read_bytes(path)
    dims = _parse_header(blob, SINOGRAM_MAGIC, path)
    views = dims[1]
    angles_end = HEADER.size + views * ANGLE_DTYPE.itemsize
    if len(blob) < angles_end:
        raise TruncatedPayloadError(f"{path}: truncated payload (angle table)")
    angles = np.frombuffer(blob, dtype=ANGLE_DTYPE, count=views, offset=HEADER.size)
    if not np.all(np.isfinite(angles)) or np.any(np.diff(angles) <= 0):
        raise CorruptHeaderError(f"{path}: view angles must be finite and strictly increasing")
    data = _payload(blob, angles_end, dims, path)
    return Sinogram(data.astype(np.float64)), tuple(float(angle) for angle in angles)
