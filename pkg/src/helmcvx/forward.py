"""Lippmann-Schwinger forward solver and synthetic data generation.

The total field solves the second-kind equation
    u = u_0 + k^2 * int_Omega G_k(x - x') (c(x') - 1) u(x') dx'
with G_k the outgoing free-space Helmholtz kernel. The volume integral
is discretized on the grid nodes with the kernel truncated to the
padded periodic box, so the convolution is exact FFT circular
convolution of the sampled kernel (no wrap-around reaches Omega). The
kernel weight at zero offset is the analytic integral of G_k over the
volume-equivalent ball of one cell.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.fft
from scipy.ndimage import map_coordinates
from scipy.sparse.linalg import LinearOperator, gmres

from .grid import Grid3, ScalarField, SourceArray, WaveField
from . import io as fio


def incident_field(grid: Grid3, x_src: np.ndarray, k: float) -> np.ndarray:
    """Point-source field exp(ik|x - x_src|) / (4 pi |x - x_src|) on the grid."""
    X, Y, Z = grid.meshgrid()
    r = np.sqrt((X - x_src[0]) ** 2 + (Y - x_src[1]) ** 2 + (Z - x_src[2]) ** 2)
    return np.exp(1j * k * r) / (4.0 * np.pi * r)


def _kernel_fft(z: int, h: float, k: float) -> tuple[np.ndarray, int]:
    """FFT of the truncated Green's kernel on the padded periodic box."""
    m = scipy.fft.next_fast_len(2 * z)
    idx = np.fft.fftfreq(m, d=1.0 / m)  # signed offsets
    dx = idx * h
    X, Y, Z = np.meshgrid(dx, dx, dx, indexing="ij")
    r = np.sqrt(X**2 + Y**2 + Z**2)
    with np.errstate(divide="ignore", invalid="ignore"):
        kern = h**3 * np.exp(1j * k * r) / (4.0 * np.pi * r)
    # zero-offset weight: integral of G over the ball of one cell's volume
    r_eq = (3.0 / (4.0 * np.pi)) ** (1.0 / 3.0) * h
    ika = 1j * k * r_eq
    kern[0, 0, 0] = (np.exp(ika) * (r_eq / (1j * k) + 1.0 / k**2) - 1.0 / k**2)
    return scipy.fft.fftn(kern), m


@dataclass
class SolveInfo:
    iterations: int
    residuals: list


class LSOperator:
    """Matrix-free discretization of (I - k^2 G * (c - 1)) on one grid."""

    def __init__(self, grid: Grid3, k: float, contrast: np.ndarray,
                 tol: float = 1e-8, max_iter: int = 1000, restart: int = 30):
        z = grid.Z_h
        contrast = np.asarray(contrast, dtype=np.float64)
        if contrast.shape != (z, z, z):
            raise ValueError("contrast shape does not match grid")
        if contrast.min() < -1e-12:
            raise ValueError("contrast c - 1 must be nonnegative")
        self.grid = grid
        self.k = k
        self.contrast = contrast
        self.tol = tol
        self.max_iter = max_iter
        self.restart = restart
        self._khat, self._m = _kernel_fft(z, grid.h, k)

    def apply_green(self, f: np.ndarray) -> np.ndarray:
        """Discrete volume potential int G_k(x - x') f(x') dx'."""
        z, m = self.grid.Z_h, self._m
        pad = np.zeros((m, m, m), dtype=np.complex128)
        pad[:z, :z, :z] = f
        out = scipy.fft.ifftn(scipy.fft.fftn(pad) * self._khat)
        return out[:z, :z, :z]

    def apply_green_direct(self, f: np.ndarray) -> np.ndarray:
        """O(n^2) summation oracle with the identical kernel weights."""
        z, h, k = self.grid.Z_h, self.grid.h, self.k
        ii = np.arange(z)
        P, Q, S = np.meshgrid(ii, ii, ii, indexing="ij")
        nodes = np.stack([P, Q, S], axis=-1).reshape(-1, 3)
        fr = np.asarray(f).reshape(-1)
        diff = nodes[:, None, :] - nodes[None, :, :]
        r = h * np.sqrt((diff**2).sum(axis=-1))
        with np.errstate(divide="ignore", invalid="ignore"):
            g = h**3 * np.exp(1j * k * r) / (4.0 * np.pi * r)
        r_eq = (3.0 / (4.0 * np.pi)) ** (1.0 / 3.0) * h
        ika = 1j * k * r_eq
        g[np.arange(len(nodes)), np.arange(len(nodes))] = (
            np.exp(ika) * (r_eq / (1j * k) + 1.0 / k**2) - 1.0 / k**2
        )
        return (g @ fr).reshape(z, z, z)

    def matvec(self, u: np.ndarray) -> np.ndarray:
        return u - self.k**2 * self.apply_green(self.contrast * u)

    def solve(self, x_src: np.ndarray) -> tuple[np.ndarray, SolveInfo]:
        """Total field for one source; raises on non-convergence."""
        z = self.grid.Z_h
        u0 = incident_field(self.grid, x_src, self.k)
        if not self.contrast.any():
            return u0, SolveInfo(0, [])
        n = z**3
        op = LinearOperator(
            (n, n),
            matvec=lambda v: self.matvec(v.reshape(z, z, z)).ravel(),
            dtype=np.complex128,
        )
        residuals: list = []
        sol, info = gmres(
            op, u0.ravel(), rtol=self.tol, atol=0.0,
            restart=self.restart, maxiter=self.max_iter,
            callback=residuals.append, callback_type="pr_norm",
        )
        if info != 0:
            last = residuals[-1] if residuals else float("nan")
            raise RuntimeError(
                f"GMRES did not converge ({info=}); last residual {last:.3e}"
            )
        return sol.reshape(z, z, z), SolveInfo(len(residuals), residuals)


def solve_ls(op: LSOperator, x_src: np.ndarray) -> np.ndarray:
    u, _ = op.solve(x_src)
    return u


@dataclass
class MeasuredData:
    """Backscattering data on Gamma: Dirichlet trace F and one-sided
    z-derivative G, both (n_src, Z_h, Z_h)."""

    grid: Grid3
    sources: SourceArray
    k: float
    F: np.ndarray
    G: np.ndarray
    delta: float = 0.0

    def __post_init__(self):
        z = self.grid.Z_h
        want = (self.sources.n_src, z, z)
        if self.F.shape != want or self.G.shape != want:
            raise ValueError("measured-data shapes do not match grid/sources")
        if not (np.all(np.isfinite(self.F)) and np.all(np.isfinite(self.G))):
            raise ValueError("measured data contain non-finite entries")

    def save(self, path) -> None:
        """CVXF container: payload per source is the Dirichlet plane F
        followed by the z-derivative plane G, each row-major in (p, q)."""
        z = self.grid.Z_h
        payload = np.concatenate(
            [self.F.reshape(self.sources.n_src, z * z),
             self.G.reshape(self.sources.n_src, z * z)], axis=1)
        header = fio._HEADER.pack(fio.MAGIC, fio.FORMAT_VERSION, fio.KIND_COMPLEX,
                                  self.sources.n_src, z, self.grid.R)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload.astype("<c16").tobytes())

    @classmethod
    def load(cls, path, sources: SourceArray, k: float,
             delta: float = 0.0) -> "MeasuredData":
        with open(path, "rb") as fh:
            head = fh.read(fio._HEADER.size)
            if len(head) < fio._HEADER.size:
                raise fio.FormatError(f"{path}: short header")
            magic, version, kind, n_src, z, big_r = fio._HEADER.unpack(head)
            if magic != fio.MAGIC or kind != fio.KIND_COMPLEX:
                raise fio.FormatError(f"{path}: not a measured-data file")
            if version != fio.FORMAT_VERSION:
                raise fio.FormatError(f"{path}: unsupported format version {version}")
            if n_src != sources.n_src:
                raise fio.FormatError(
                    f"{path}: file has {n_src} sources, config expects {sources.n_src}")
            count = n_src * 2 * z * z
            raw = fh.read(count * 16)
            if len(raw) != count * 16:
                raise fio.FormatError(f"{path}: truncated payload")
        payload = np.frombuffer(raw, dtype="<c16").reshape(n_src, 2 * z * z)
        F = payload[:, : z * z].reshape(n_src, z, z).copy()
        G = payload[:, z * z :].reshape(n_src, z, z).copy()
        return cls(Grid3(big_r, z), sources, k, F, G, delta)


def sample_contrast(c_true: ScalarField, grid: Grid3,
                    c_fn: Callable | None = None) -> np.ndarray:
    """Contrast c - 1 on a (possibly finer) forward grid.

    A geometry callback c_fn(X, Y, Z) -> c is sampled exactly; otherwise
    the stored field is transferred by trilinear interpolation (identity
    when the grids coincide)."""
    if c_fn is not None:
        X, Y, Z = grid.meshgrid()
        return np.asarray(c_fn(X, Y, Z), dtype=np.float64) - 1.0
    if grid.Z_h == c_true.grid.Z_h:
        return c_true.values - 1.0
    scale = (grid.Z_h - 1) / (c_true.grid.Z_h - 1)
    ii = np.arange(grid.Z_h) / scale
    P, Q, S = np.meshgrid(ii, ii, ii, indexing="ij")
    return map_coordinates(c_true.values, [P, Q, S], order=1, mode="nearest") - 1.0


def simulate(c_true: ScalarField, sources: SourceArray, k: float,
             delta: float = 0.0, seed: int = 0, forward_refine: int = 1,
             c_fn: Callable | None = None, tol: float = 1e-8,
             full_field: bool = False):
    """Generate F and G on Gamma for every source.

    With forward_refine > 1 the solve runs on a finer grid (shared
    nodes) and Gamma data are restricted by injection. Multiplicative
    noise (1 + delta * U(-1, 1)) is applied independently per sample and
    per field. Returns MeasuredData, or (MeasuredData, WaveField) with
    full_field=True (fields on the inversion grid, refine taken as 1).
    """
    grid = c_true.grid
    c_true.check_dielectric()
    sources.validate_against(grid)
    fgrid = grid.refined(forward_refine) if forward_refine > 1 else grid
    contrast = sample_contrast(c_true, fgrid, c_fn)
    op = LSOperator(fgrid, k, contrast, tol=tol)

    zf, step = fgrid.Z_h, forward_refine
    F = np.zeros((sources.n_src, grid.Z_h, grid.Z_h), dtype=np.complex128)
    G = np.zeros_like(F)
    volumes = []
    for i, pos in enumerate(sources.positions()):
        u = solve_ls(op, pos)
        gz = (u[:, :, 1] - u[:, :, 0]) / fgrid.h
        F[i] = u[::step, ::step, 0]
        G[i] = gz[::step, ::step]
        if full_field:
            volumes.append(u[::step, ::step, ::step])

    if delta > 0.0:
        rng = np.random.default_rng(seed)
        F = F * (1.0 + delta * rng.uniform(-1.0, 1.0, size=F.shape))
        G = G * (1.0 + delta * rng.uniform(-1.0, 1.0, size=G.shape))

    data = MeasuredData(grid, sources, k, F, G, delta)
    if full_field:
        return data, WaveField(grid, np.stack(volumes))
    return data
