"""Binary snapshot files holding one full fine-grid state.

Layout (little-endian), magic "RBSNAP01":

    magic   8 bytes ASCII
    n_x     uint32
    n_y     uint32
    L_x     float64
    L_y     float64
    time    float64
    four arrays in order u, v, theta, pressure, each stored as a uint64
    element count followed by that many float64 values, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, MissingInputError
from .grid import CENTER, XFACE, YFACE, FieldSet, StaggeredGrid

_MAGIC = b"RBSNAP01"
_HEADER = struct.Struct("<8sIIddd")


def write_snapshot(path, fs: FieldSet) -> None:
    g = fs.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, g.n_x, g.n_y, g.L_x, g.L_y, fs.time))
        for field in (fs.u, fs.v, fs.theta, fs.pressure):
            arr = np.ascontiguousarray(field.values, dtype="<f8")
            fh.write(struct.pack("<Q", arr.size))
            fh.write(arr.tobytes())


def read_snapshot(path, grid: StaggeredGrid | None = None) -> FieldSet:
    """Load a snapshot; validates sizes and, when given, the expected grid."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"snapshot {path} not found")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ConfigurationError(f"{path} is truncated")
    magic, n_x, n_y, l_x, l_y, time = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise ConfigurationError(f"{path} is not a snapshot file")
    file_grid = StaggeredGrid(n_x=n_x, n_y=n_y, L_x=l_x, L_y=l_y)
    if grid is not None and grid != file_grid:
        raise ConfigurationError(
            f"snapshot grid {n_x}x{n_y} (L={l_x}x{l_y}) does not match the "
            f"expected grid {grid.n_x}x{grid.n_y} "
            f"(L={grid.L_x}x{grid.L_y})")
    shapes = (file_grid.shape(XFACE), file_grid.shape(YFACE),
              file_grid.shape(CENTER), file_grid.shape(CENTER))
    arrays = []
    pos = _HEADER.size
    for shape in shapes:
        want = shape[0] * shape[1]
        if pos + 8 > len(raw):
            raise ConfigurationError(f"{path} is truncated")
        (count,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        if count != want:
            raise ConfigurationError(
                f"{path}: array of {count} values where {want} expected")
        if pos + 8 * want > len(raw):
            raise ConfigurationError(f"{path} is truncated")
        arrays.append(np.frombuffer(raw, dtype="<f8", count=want,
                                    offset=pos).reshape(shape).copy())
        pos += 8 * want
    if pos != len(raw):
        raise ConfigurationError(f"{path} has trailing bytes")
    return FieldSet.from_arrays(file_grid, *arrays, time=time)
