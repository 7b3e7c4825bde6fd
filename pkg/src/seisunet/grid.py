"""Raster type shared by every stage, plus its binary and image file formats.

A :class:`Grid2D` stores ``nz`` rows of ``nx`` cells, row-major, with row
index increasing with depth so that grids display upright as images.

File formats (all little-endian):

``VGRD``
    magic ``b"VGRD"``, ``u32`` version, ``u32`` nx, ``u32`` nz, ``f32`` dx,
    then ``nz * nx`` ``f32`` values.
``PGM``
    8-bit binary ``P5`` image, min-max scaled.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Grid2D",
    "GridFormatError",
    "GridVersionError",
    "GridValidationError",
    "write_grid",
    "read_grid",
    "normalize_minmax",
    "minmax_array",
    "export_image",
    "write_json",
]

VGRD_MAGIC = b"VGRD"
VGRD_VERSION = 1
_HEADER = struct.Struct("<4sIIIf")
MIN_CELLS = 8


class GridValidationError(ValueError):
    """Grid contents violate the raster invariants."""


class GridFormatError(ValueError):
    """A grid file is malformed (bad magic, truncated payload)."""


class GridVersionError(GridFormatError):
    """A grid file was written by an unsupported format version."""


@dataclass(eq=False)
class Grid2D:
    """2D float32 raster with square cells of size ``dx`` metres.

    ``values`` has shape ``(nz, nx)``; row ``k`` is the constant-depth
    slice ``k`` cells below the surface.
    """

    values: np.ndarray
    dx: float = 1.0
    nx: int = field(init=False)
    nz: int = field(init=False)

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise GridValidationError(f"grid values must be 2D, got shape {values.shape}")
        nz, nx = values.shape
        if nx < MIN_CELLS or nz < MIN_CELLS:
            raise GridValidationError(f"grid must be at least {MIN_CELLS}x{MIN_CELLS}, got {nx}x{nz}")
        if not np.isfinite(values).all():
            raise GridValidationError("grid contains non-finite values")
        dx = float(np.float32(self.dx))
        if not (dx > 0 and np.isfinite(dx)):
            raise GridValidationError(f"dx must be positive and finite, got {self.dx}")
        self.values = values
        self.dx = dx
        self.nx = nx
        self.nz = nz

    @property
    def shape(self):
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, Grid2D):
            return NotImplemented
        return (
            self.dx == other.dx
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
        )

    def check_bounds(self, v_floor, v_ceil):
        """Raise if any value lies outside ``[v_floor, v_ceil]``."""
        lo, hi = float(self.values.min()), float(self.values.max())
        if lo < v_floor or hi > v_ceil:
            raise GridValidationError(f"values span [{lo}, {hi}], outside [{v_floor}, {v_ceil}]")


def write_grid(grid: Grid2D, path) -> None:
    path = Path(path)
    if not np.isfinite(grid.values).all():
        raise GridValidationError(f"refusing to write non-finite grid to {path}")
    header = _HEADER.pack(VGRD_MAGIC, VGRD_VERSION, grid.nx, grid.nz, grid.dx)
    payload = grid.values.astype("<f4", copy=False).tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write grid file {path}: {exc}") from exc


def read_grid(path) -> Grid2D:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read grid file {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise GridFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, nx, nz, dx = _HEADER.unpack_from(raw)
    if magic != VGRD_MAGIC:
        raise GridFormatError(f"{path}: bad magic {magic!r}, expected {VGRD_MAGIC!r}")
    if version != VGRD_VERSION:
        raise GridVersionError(f"{path}: unsupported VGRD version {version} (expected {VGRD_VERSION})")
    expected = _HEADER.size + 4 * nx * nz
    if len(raw) != expected:
        raise GridFormatError(f"{path}: payload size {len(raw)} bytes, expected {expected}")
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(nz, nx)
    try:
        return Grid2D(values.astype(np.float32), dx=dx)
    except GridValidationError as exc:
        raise GridFormatError(f"{path}: {exc}") from exc


def minmax_array(values, lo=None, hi=None):
    """Affine map of ``values`` onto [0, 1]; a zero span maps to all zeros."""
    values = np.asarray(values)
    lo = values.min() if lo is None else lo
    hi = values.max() if hi is None else hi
    span = hi - lo
    if span <= 0:
        return np.zeros_like(values)
    return (values - lo) / span


def normalize_minmax(grid: Grid2D) -> Grid2D:
    """Min-max scale a grid onto [0, 1]. Constant grids map to all zeros."""
    values = grid.values.astype(np.float64)
    return Grid2D(minmax_array(values).astype(np.float32), dx=grid.dx)


def export_image(grid, path, colormap="gray") -> None:
    """Write ``grid`` as an 8-bit binary PGM.

    ``colormap="gray"`` min-max scales to 0..255 (constant grids are black).
    ``colormap="gray-symmetric"`` maps ``[-m, m]`` with ``m = max|v|`` so that
    zero sits at mid-gray; used for signed difference images.
    """
    values = grid.values if isinstance(grid, Grid2D) else np.asarray(grid, dtype=np.float32)
    values = values.astype(np.float64)
    if not np.isfinite(values).all():
        raise GridValidationError(f"refusing to export non-finite grid to {path}")
    if colormap == "gray":
        scaled = minmax_array(values)
    elif colormap == "gray-symmetric":
        m = np.abs(values).max()
        scaled = np.full_like(values, 0.5) if m == 0 else 0.5 + 0.5 * values / m
    else:
        raise ValueError(f"unknown colormap {colormap!r}")
    pixels = np.clip(np.floor(scaled * 255.0 + 0.5), 0, 255).astype(np.uint8)
    nz, nx = pixels.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{nx} {nz}\n255\n".encode("ascii"))
            fh.write(pixels.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write image {path}: {exc}") from exc


def write_json(obj, path) -> None:
    """UTF-8 JSON with sorted keys, written atomically."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    text = json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)
