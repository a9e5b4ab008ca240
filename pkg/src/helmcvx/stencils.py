"""Finite-difference stencils on the cubic grid, with exact adjoints.

First derivatives use central differences in the interior and one-sided
second-order differences on the faces. The Laplacian uses the standard
7-point stencil and is defined only at nodes interior in all three axes;
its 1D factor has zero end rows so that masked residual sums see exactly
the interior stencil.

Each 1D operator is stored as a small sparse matrix, so the adjoint of
every 3D operation is the transposed matrix applied along the same axis.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .grid import Grid3


def diff1_matrix(z: int, h: float) -> sp.csr_matrix:
    """d/dx: central interior, one-sided second order at both ends."""
    d = sp.lil_matrix((z, z))
    d[0, 0], d[0, 1], d[0, 2] = -3.0, 4.0, -1.0
    for i in range(1, z - 1):
        d[i, i - 1], d[i, i + 1] = -1.0, 1.0
    d[z - 1, z - 1], d[z - 1, z - 2], d[z - 1, z - 3] = 3.0, -4.0, 1.0
    return (d / (2.0 * h)).tocsr()


def lap1_matrix(z: int, h: float) -> sp.csr_matrix:
    """d2/dx2 at interior rows; end rows are zero."""
    d = sp.lil_matrix((z, z))
    for i in range(1, z - 1):
        d[i, i - 1], d[i, i], d[i, i + 1] = 1.0, -2.0, 1.0
    return (d / h**2).tocsr()


def _apply_axis(mat: sp.csr_matrix, f: np.ndarray, axis: int) -> np.ndarray:
    """Apply a (Z, Z) operator along one of the last three axes of f."""
    ax = f.ndim - 3 + axis
    moved = np.moveaxis(f, ax, 0)
    out = (mat @ moved.reshape(moved.shape[0], -1)).reshape(moved.shape)
    return np.moveaxis(out, 0, ax)


class DiffOps:
    """Bundle of 3D difference operators and their adjoints for one grid."""

    def __init__(self, grid: Grid3):
        z, h = grid.Z_h, grid.h
        self.grid = grid
        self.D1 = diff1_matrix(z, h)
        self.D1T = self.D1.T.tocsr()
        self.L1 = lap1_matrix(z, h)
        self.L1T = self.L1.T.tocsr()
        mask1 = np.zeros(z)
        mask1[1:-1] = 1.0
        self.interior_mask = (
            mask1[:, None, None] * mask1[None, :, None] * mask1[None, None, :]
        )

    def grad(self, f: np.ndarray) -> np.ndarray:
        """Gradient of f along the last three axes; result has a leading
        component axis of length 3 inserted before them."""
        parts = [_apply_axis(self.D1, f, a) for a in range(3)]
        return np.stack(parts, axis=f.ndim - 3)

    def grad_adj(self, g: np.ndarray) -> np.ndarray:
        """Adjoint of grad: g has the component axis grad inserted."""
        comp_ax = g.ndim - 4
        parts = np.moveaxis(g, comp_ax, 0)
        return sum(_apply_axis(self.D1T, parts[a], a) for a in range(3))

    def lap(self, f: np.ndarray) -> np.ndarray:
        """7-point Laplacian; valid only where all-axis interior (masked use)."""
        return sum(_apply_axis(self.L1, f, a) for a in range(3))

    def lap_adj(self, g: np.ndarray) -> np.ndarray:
        return sum(_apply_axis(self.L1T, g, a) for a in range(3))

    def dz_gamma(self, f: np.ndarray) -> np.ndarray:
        """One-sided z-derivative on the measurement face:
        (f[..., 1] - f[..., 0]) / h."""
        return (f[..., 1] - f[..., 0]) / self.grid.h
