"""Bit-exact binary field I/O (CVXF format) and CSV helpers.

CVXF layout: magic "CVXF", u32 LE format version, u8 kind (0 real,
1 complex), u32 LE n_src, u32 LE Z_h, f64 LE R, then the payload as
f64 LE with linear index src*Z_h^3 + s*Z_h^2 + q*Z_h + p (complex
values interleaved re, im).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .grid import Grid3, ScalarField, WaveField

MAGIC = b"CVXF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIBIId")

KIND_REAL = 0
KIND_COMPLEX = 1


class FormatError(ValueError):
    """Raised on a malformed or truncated CVXF file."""


def _to_file_order(values: np.ndarray) -> np.ndarray:
    # logical (src, p, q, s) -> file order (src, s, q, p)
    return np.ascontiguousarray(values.transpose(0, 3, 2, 1))


def _from_file_order(values: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(values.transpose(0, 3, 2, 1))


def write_field(fld: WaveField | ScalarField, path: str | Path) -> None:
    if isinstance(fld, WaveField):
        kind, n_src = KIND_COMPLEX, fld.n_src
        values = fld.values
    elif isinstance(fld, ScalarField):
        kind, n_src = KIND_REAL, 1
        values = fld.values[None]
    else:
        raise TypeError(f"cannot serialize {type(fld).__name__}")
    grid = fld.grid
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, kind, n_src, grid.Z_h, grid.R)
    payload = _to_file_order(values)
    if kind == KIND_COMPLEX:
        raw = payload.astype("<c16").tobytes()
    else:
        raw = payload.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(raw)


def read_field(path: str | Path) -> WaveField | ScalarField:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise FormatError(f"{path}: short header")
        magic, version, kind, n_src, z_h, big_r = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format version {version}")
        if kind not in (KIND_REAL, KIND_COMPLEX):
            raise FormatError(f"{path}: unknown kind {kind}")
        count = n_src * z_h**3
        dtype = np.dtype("<c16") if kind == KIND_COMPLEX else np.dtype("<f8")
        raw = fh.read(count * dtype.itemsize)
        if len(raw) != count * dtype.itemsize:
            raise FormatError(f"{path}: truncated payload")
    grid = Grid3(big_r, z_h)
    values = _from_file_order(np.frombuffer(raw, dtype=dtype).reshape(n_src, z_h, z_h, z_h))
    if kind == KIND_COMPLEX:
        return WaveField(grid, values)
    return ScalarField(grid, values[0].astype(np.float64))


def write_csv(path: str | Path, header: list[str], rows) -> None:
    """CSV with '.' decimal and 17 significant digits."""
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if isinstance(x, (complex, np.complexfloating)):
        return f"{x.real:.17g}{x.imag:+.17g}j"
    return str(x)


def write_matrix_csv(path: str | Path, matrix: np.ndarray) -> None:
    """Row-major dump of a 2D array, 17 significant digits."""
    m = np.asarray(matrix)
    write_csv(path, [f"c{j}" for j in range(m.shape[1])], m)
