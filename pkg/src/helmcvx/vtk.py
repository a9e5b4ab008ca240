"""Legacy VTK structured-points writer for volume inspection."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .grid import ScalarField, WaveField


def export_vtk(fld: ScalarField | WaveField, path: str | Path, name: str = "field") -> None:
    """Write a field as an ASCII STRUCTURED_POINTS file.

    Real fields produce one point-data array; complex fields produce
    magnitude and phase arrays (first source only for multi-source fields).
    """
    grid = fld.grid
    z = grid.Z_h
    if isinstance(fld, ScalarField):
        arrays = {name: fld.values}
    else:
        v = fld.values[0]
        arrays = {f"{name}_magnitude": np.abs(v), f"{name}_phase": np.angle(v)}

    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{name}\n")
        fh.write("ASCII\n")
        fh.write("DATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {z} {z} {z}\n")
        fh.write(f"ORIGIN {-grid.R:.17g} {-grid.R:.17g} {-grid.R:.17g}\n")
        fh.write(f"SPACING {grid.h:.17g} {grid.h:.17g} {grid.h:.17g}\n")
        fh.write(f"POINT_DATA {z**3}\n")
        for label, data in arrays.items():
            fh.write(f"SCALARS {label} double 1\n")
            fh.write("LOOKUP_TABLE default\n")
            # VTK expects x fastest: iterate (s, q, p) and emit p fastest
            flat = data.transpose(2, 1, 0).ravel()
            for i in range(0, flat.size, 6):
                fh.write(" ".join(f"{x:.9g}" for x in flat[i : i + 6]) + "\n")
