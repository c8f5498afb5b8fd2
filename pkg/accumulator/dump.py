"""Binary accumulator dump for debugging.

Layout (little-endian): magic ``RVAG``, uint32 version, float64 origin[3],
float64 resolution, uint32 dims[3], then nx*ny*nz uint32 counts with x
varying fastest, then y, then z.
"""

import struct

import numpy as np

from core.errors import GridDumpError, RadvoteError
from .grid import AccumulatorGrid

MAGIC = b"RVAG"
VERSION = 1
HEADER = struct.Struct("<4sI3dd3I")


def save_grid(grid: AccumulatorGrid, path) -> None:
    header = HEADER.pack(MAGIC, VERSION, *grid.origin.tolist(), grid.resolution, *grid.dims)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(grid.counts, dtype="<u4").tobytes())


def load_grid(path) -> AccumulatorGrid:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < HEADER.size:
        raise GridDumpError(f"{path}: truncated header")
    magic, version, ox, oy, oz, resolution, nx, ny, nz = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise GridDumpError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise GridDumpError(f"{path}: unsupported version {version}")
    expected = nx * ny * nz * 4
    payload = blob[HEADER.size:]
    if len(payload) != expected:
        raise GridDumpError(f"{path}: expected {expected} count bytes, found {len(payload)}")
    counts = np.frombuffer(payload, dtype="<u4").astype(np.uint32).reshape(nz, ny, nx)
    try:
        return AccumulatorGrid(np.array([ox, oy, oz]), resolution, (nx, ny, nz), counts)
    except RadvoteError as e:
        raise GridDumpError(f"{path}: unusable grid geometry ({e})") from e
