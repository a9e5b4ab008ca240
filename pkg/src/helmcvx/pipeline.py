"""From measured data to inversion inputs.

Builds the complex log-field v = log(u / u_0) with branch-consistent
phase, completes the unmeasured boundary with the free-space field
(which makes v vanish on every face except Gamma), and projects the
per-source boundary traces onto the spectral basis.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import SpectralBasis, fourier_project
from .forward import MeasuredData, incident_field
from .grid import Grid3, SourceArray
from . import io as fio

# face order used in serialized boundary data
FACES = ("gamma", "z+R", "x-R", "x+R", "y-R", "y+R")


def unwrap_phase_2d(phase: np.ndarray) -> np.ndarray:
    """Unwrap a (P, Q) phase plane from the (0, 0) corner.

    Column q=0 is unwrapped downward, then each row left to right, so
    every adjacent jump along the sweep lies in (-pi, pi]."""
    out = phase.copy()
    out[:, 0] = np.unwrap(out[:, 0])
    return np.unwrap(out, axis=1)


def unwrap_phase_3d(phase: np.ndarray) -> np.ndarray:
    """Unwrap a (P, Q, S) phase volume plane by plane from z = +R down.

    The top plane (far from the scatterer, where v is near zero) is
    unwrapped in 2D; each node below follows its upper neighbor."""
    out = phase.copy()
    out[:, :, -1] = unwrap_phase_2d(out[:, :, -1])
    out = out[:, :, ::-1]
    out = np.unwrap(out, axis=2)
    return out[:, :, ::-1]


def log_ratio(u: np.ndarray, u0: np.ndarray, unwrap_mode: str = "2d") -> np.ndarray:
    """v = log(u / u_0) with unwrapped imaginary part.

    Works on arrays of any matching shape whose trailing axes are the
    spatial ones: (..., P, Q) for mode "2d", (..., P, Q, S) for "3d".
    """
    ratio = np.asarray(u) / np.asarray(u0)
    mag = np.abs(ratio)
    if mag.min() < 1e-12:
        loc = np.unravel_index(np.argmin(mag), mag.shape)
        raise ValueError(
            f"|u/u0| = {mag.min():.3e} at index {loc}: the non-vanishing "
            "assumption on the total field is violated"
        )
    phase = np.angle(ratio)
    spatial = 2 if unwrap_mode == "2d" else 3
    if unwrap_mode not in ("2d", "3d"):
        raise ValueError(f"unknown unwrap mode {unwrap_mode!r}")
    lead = phase.shape[:-spatial]
    flat = phase.reshape((-1,) + phase.shape[-spatial:])
    fn = unwrap_phase_2d if unwrap_mode == "2d" else unwrap_phase_3d
    unwrapped = np.stack([fn(pl) for pl in flat]).reshape(lead + phase.shape[-spatial:])
    return np.log(mag) + 1j * unwrapped


def complete_data(data: MeasuredData) -> np.ndarray:
    """Total field on all of the boundary, (n_src, 6, Z, Z) in FACES order.

    Gamma carries the measurement; the five unmeasured faces carry the
    free-space field."""
    grid, sources, k = data.grid, data.sources, data.k
    z = grid.Z_h
    out = np.zeros((sources.n_src, 6, z, z), dtype=np.complex128)
    for i, pos in enumerate(sources.positions()):
        u0 = incident_field(grid, pos, k)
        out[i, 0] = data.F[i]
        out[i, 1] = u0[:, :, -1]
        out[i, 2] = u0[0, :, :]
        out[i, 3] = u0[-1, :, :]
        out[i, 4] = u0[:, 0, :]
        out[i, 5] = u0[:, -1, :]
    return out


def incident_plane(grid: Grid3, sources: SourceArray, k: float,
                   s: int = 0) -> np.ndarray:
    """Free-space field on the z-plane with index s, (n_src, Z, Z)."""
    X, Y, _ = grid.meshgrid()
    Xg, Yg = X[:, :, 0], Y[:, :, 0]
    zg = -grid.R + s * grid.h
    u0 = np.zeros((sources.n_src, grid.Z_h, grid.Z_h), dtype=np.complex128)
    for i, pos in enumerate(sources.positions()):
        r = np.sqrt((Xg - pos[0]) ** 2 + (Yg - pos[1]) ** 2 + (zg - pos[2]) ** 2)
        u0[i] = np.exp(1j * k * r) / (4.0 * np.pi * r)
    return u0


@dataclass
class BoundaryData:
    """Spectral boundary coefficients: Dirichlet psi0 on every face
    (zero off Gamma by data completion) and Neumann psi1 on Gamma."""

    grid: Grid3
    N: int
    psi0_gamma: np.ndarray  # (N, Z, Z) complex
    psi1: np.ndarray  # (N, Z, Z) complex

    def __post_init__(self):
        z = self.grid.Z_h
        if self.psi0_gamma.shape != (self.N, z, z) or self.psi1.shape != (self.N, z, z):
            raise ValueError("boundary coefficient shapes do not match grid")
        if not (np.all(np.isfinite(self.psi0_gamma)) and np.all(np.isfinite(self.psi1))):
            raise ValueError("boundary data contain non-finite entries")

    def psi0_faces(self) -> np.ndarray:
        """(N, 6, Z, Z) Dirichlet data in FACES order (zero off Gamma)."""
        z = self.grid.Z_h
        out = np.zeros((self.N, 6, z, z), dtype=np.complex128)
        out[:, 0] = self.psi0_gamma
        return out

    def save(self, path: str | Path) -> None:
        """CVXF container: n_src = N, payload per n is the six Dirichlet
        faces in FACES order followed by the Gamma Neumann plane, each
        plane row-major in (p, q)."""
        z = self.grid.Z_h
        payload = np.concatenate(
            [self.psi0_faces().reshape(self.N, 6 * z * z),
             self.psi1.reshape(self.N, z * z)], axis=1)
        header = fio._HEADER.pack(fio.MAGIC, fio.FORMAT_VERSION, fio.KIND_COMPLEX,
                                  self.N, z, self.grid.R)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload.astype("<c16").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "BoundaryData":
        with open(path, "rb") as fh:
            head = fh.read(fio._HEADER.size)
            if len(head) < fio._HEADER.size:
                raise fio.FormatError(f"{path}: short header")
            magic, version, kind, n, z, big_r = fio._HEADER.unpack(head)
            if magic != fio.MAGIC or kind != fio.KIND_COMPLEX:
                raise fio.FormatError(f"{path}: not a boundary-data file")
            count = n * 7 * z * z
            raw = fh.read(count * 16)
            if len(raw) != count * 16:
                raise fio.FormatError(f"{path}: truncated payload")
        payload = np.frombuffer(raw, dtype="<c16").reshape(n, 7 * z * z)
        faces = payload[:, : 6 * z * z].reshape(n, 6, z, z)
        psi1 = payload[:, 6 * z * z :].reshape(n, z, z)
        if np.any(faces[:, 1:] != 0):
            raise fio.FormatError(f"{path}: nonzero Dirichlet data off Gamma")
        return cls(Grid3(big_r, z), n, faces[:, 0].copy(), psi1.copy())


def boundary_coeffs(data: MeasuredData, basis: SpectralBasis) -> BoundaryData:
    """Project the per-source boundary traces of v and dv/dz onto the basis.

    The measured z-derivative G is the one-sided difference of u, so the
    field on the first interior plane is u_1 = F + h G exactly; the
    Neumann trace is the matching one-sided difference of the log-field,
    (v_1 - v_0)/h. Mixing G with the analytic derivative of u_0 instead
    would inject an O(h k^2) inconsistency that dominates the data."""
    grid, sources = data.grid, data.sources
    u0_gamma = incident_plane(grid, sources, data.k, s=0)
    u0_next = incident_plane(grid, sources, data.k, s=1)
    v_gamma = log_ratio(data.F, u0_gamma, unwrap_mode="2d")  # (n_src, Z, Z)
    v_next = log_ratio(data.F + grid.h * data.G, u0_next, unwrap_mode="2d")
    dv_gamma = (v_next - v_gamma) / grid.h
    psi0 = fourier_project(v_gamma, basis, sources.alphas)
    psi1 = fourier_project(dv_gamma, basis, sources.alphas)
    return BoundaryData(grid, basis.N, psi0, psi1)


def reconstruct_from_coeffs(coeffs: np.ndarray, basis: SpectralBasis,
                            alphas: np.ndarray) -> np.ndarray:
    """Evaluate the truncated expansion sum_n g_n Psi_n(alpha) at the
    given abscissae; coeffs has leading axis N, output leading axis
    len(alphas)."""
    psi, _ = basis.eval_all(alphas)  # (N, L)
    return np.tensordot(psi.T, coeffs, axes=(1, 0))


def truncation_error(v_true: np.ndarray, basis_family, src_alphas: np.ndarray,
                     n_range) -> dict[int, float]:
    """Relative sup error of the N-term reconstruction of v over grid
    and sources, per truncation order.

    v_true has the source axis first; basis_family maps N to a built
    SpectralBasis (a callable, so quadrature settings stay the caller's).
    """
    denom = np.max(np.abs(v_true))
    out = {}
    for n in n_range:
        basis = basis_family(n)
        coeffs = fourier_project(v_true, basis, src_alphas)
        recon = reconstruct_from_coeffs(coeffs, basis, src_alphas)
        out[n] = float(np.max(np.abs(v_true - recon)) / denom)
    return out
