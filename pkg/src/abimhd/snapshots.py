"""Binary field snapshots and CSV diagnostics shared by every module.

Snapshot layout: magic bytes ``ABIM``, one version byte (1), three 32-bit
little-endian axis sizes, a 16-bit little-endian component count, then each
component as row-major 64-bit little-endian floats.

CSV values are printed with 17 significant digits so that files round-trip
exactly and identical runs are bit-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .fields import FieldDataError, GridSpec

MAGIC = b"ABIM"
VERSION = 1


def write_snapshot(path: str | Path, grid: GridSpec,
                   components: Sequence[np.ndarray]) -> None:
    comps = [np.ascontiguousarray(c, dtype="<f8") for c in components]
    for c in comps:
        if c.shape != grid.shape:
            raise FieldDataError(
                f"snapshot component shape {c.shape} does not match grid {grid.shape}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<III", *grid.shape))
        fh.write(struct.pack("<H", len(comps)))
        for c in comps:
            fh.write(c.tobytes(order="C"))


def read_snapshot(path: str | Path) -> tuple[GridSpec, list[np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise FieldDataError(f"bad snapshot magic {magic!r}")
        (version,) = struct.unpack("<B", fh.read(1))
        if version != VERSION:
            raise FieldDataError(f"unsupported snapshot version {version}")
        nx, ny, nz = struct.unpack("<III", fh.read(12))
        if not (nx == ny == nz):
            raise FieldDataError(f"snapshot axes must match, got {(nx, ny, nz)}")
        (ncomp,) = struct.unpack("<H", fh.read(2))
        grid = GridSpec(nx)
        out = []
        count = nx * ny * nz
        for _ in range(ncomp):
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise FieldDataError("snapshot truncated")
            out.append(np.frombuffer(raw, dtype="<f8").reshape(grid.shape).copy())
    return grid, out


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path: str | Path, header: Sequence[str],
              rows: Iterable[Sequence[float]],
              footer_lines: Sequence[str] = ()) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_float(x) for x in row) + "\n")
        for line in footer_lines:
            fh.write(line + "\n")


def write_manifest(path: str | Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
