"""
SAPG grid dumps.

Layout: header ``<4sIII`` = magic ``b"SAPG"``, resolution, dtype code
(0 = float32, 1 = float64), channel count (1 or 3); then the raw little-endian
payload, channel-major and x-fastest within each channel.
"""

import logging
import struct
from pathlib import Path

import numpy as np

from src.conf import messages
from src.entity.models import ScalarGrid, VectorGrid
from src.schemas.grid import GridSpec
from src.services.errors import GridFormatError

logger = logging.getLogger(__name__)

MAGIC = b"SAPG"
HEADER = struct.Struct("<4sIII")
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def _dtype_code(dtype) -> int:
    for code, candidate in DTYPE_CODES.items():
        if np.dtype(dtype) == candidate.newbyteorder("="):
            return code
    raise GridFormatError(messages.GRID_DTYPE.format(code=str(dtype)))


def write_grid(path, grid: ScalarGrid | VectorGrid) -> None:
    """
    Dumps a grid bit-exactly at its own precision.

    :param path: str | Path: Output file.
    :param grid: ScalarGrid | VectorGrid: float32 or float64 values.
    """
    channels = 3 if isinstance(grid, VectorGrid) else 1
    code = _dtype_code(grid.dtype)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, grid.spec.resolution, code, channels))
        fh.write(np.ascontiguousarray(grid.flat, dtype=DTYPE_CODES[code]).tobytes())
    logger.info(f"Wrote {channels}-channel r={grid.spec.resolution} grid to {path}")


def read_grid(path) -> ScalarGrid | VectorGrid:
    """
    Loads a SAPG dump.

    :return: ScalarGrid for one channel, VectorGrid for three.
    :raises GridFormatError: Bad magic, unknown dtype or channel count, truncated or oversized payload.
    """
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise GridFormatError(messages.GRID_PAYLOAD.format(expected=HEADER.size, found=len(data)))
    magic, resolution, code, channels = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise GridFormatError(messages.GRID_MAGIC.format(magic=magic))
    if code not in DTYPE_CODES:
        raise GridFormatError(messages.GRID_DTYPE.format(code=code))
    if channels not in (1, 3):
        raise GridFormatError(f"Unsupported channel count {channels}")

    dtype = DTYPE_CODES[code]
    expected = channels * resolution**3 * dtype.itemsize
    found = len(data) - HEADER.size
    if found != expected:
        raise GridFormatError(messages.GRID_PAYLOAD.format(expected=expected, found=found))
    try:
        spec = GridSpec(resolution=resolution)
    except ValueError as err:
        raise GridFormatError(f"Invalid grid resolution {resolution}: {err}") from err

    flat = np.frombuffer(data, dtype=dtype, offset=HEADER.size).astype(dtype.newbyteorder("="))
    if channels == 3:
        return VectorGrid.from_flat(spec, flat)
    return ScalarGrid.from_flat(spec, flat)
