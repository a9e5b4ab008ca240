"""Orthonormal basis {Psi_n} on L^2(-a, a) and the alpha-integral tensors.

Psi_n is the Gram-Schmidt orthonormalization of alpha^n * exp(alpha).
Its key property: the derivative-coupling matrix S with entries
s_mn = <Psi_n', Psi_m> is unit upper-triangular, hence invertible with
determinant 1 for every truncation order.

The orthonormalization runs on exact monomial-times-exponential moment
integrals evaluated in extended precision (the monomial Gramian is badly
conditioned in float64 beyond N ~ 6); the resulting coefficient tables
are stored in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import mpmath as mp
import numpy as np
from scipy.interpolate import CubicSpline

from .grid import Grid3, SourceArray

_GS_DPS = 60


def _exp_moments(a, order: int) -> list:
    """M_m = integral of alpha^m * exp(2 alpha) over [-a, a], m = 0..order."""
    a = mp.mpf(a)
    e2a, em2a = mp.exp(2 * a), mp.exp(-2 * a)
    moments = [(e2a - em2a) / 2]
    for m in range(1, order + 1):
        boundary = (a**m * e2a - (-a) ** m * em2a) / 2
        moments.append(boundary - mp.mpf(m) / 2 * moments[-1])
    return moments


def _poly_inner(p, q, moments) -> mp.mpf:
    """<p e^alpha, q e^alpha> in L^2(-a, a) from exponential moments."""
    acc = mp.mpf(0)
    for i, pi in enumerate(p):
        if pi == 0:
            continue
        for j, qj in enumerate(q):
            if qj != 0:
                acc += pi * qj * moments[i + j]
    return acc


def _poly_deriv_plus(p) -> list:
    """Coefficients of p' + p, i.e. the polynomial factor of (p e^alpha)'."""
    out = list(p)
    for j in range(len(p) - 1):
        out[j] = out[j] + (j + 1) * p[j + 1]
    return out


@dataclass
class SpectralBasis:
    """Orthonormal basis with coefficient table, S matrix and triple tensor."""

    N: int
    a: float
    coeffs: np.ndarray  # (N, N), row n: polynomial factor of Psi_n
    S: np.ndarray  # (N, N), s_mn = <Psi_n', Psi_m>
    T: np.ndarray  # (N, N, N), T_mnl = int Psi_m Psi_n Psi_l'
    quad_x: np.ndarray
    quad_w: np.ndarray

    def eval(self, n: int, alpha) -> tuple[np.ndarray, np.ndarray]:
        """(Psi_n(alpha), Psi_n'(alpha)) for |alpha| <= a."""
        if not 0 <= n < self.N:
            raise IndexError(f"basis index {n} out of range for N={self.N}")
        alpha = np.asarray(alpha, dtype=np.float64)
        if np.any(np.abs(alpha) > self.a + 1e-12):
            raise ValueError("alpha outside [-a, a]")
        p = self.coeffs[n]
        val = np.polynomial.polynomial.polyval(alpha, p)
        dpoly = np.polynomial.polynomial.polyval(
            alpha, np.asarray(_poly_deriv_plus(list(p)))
        )
        e = np.exp(alpha)
        return val * e, dpoly * e

    def eval_all(self, alpha) -> tuple[np.ndarray, np.ndarray]:
        """Stacked (Psi, Psi') values, shapes (N, *alpha.shape)."""
        vals, ders = zip(*(self.eval(n, alpha) for n in range(self.N)))
        return np.stack(vals), np.stack(ders)


def build_basis(N: int, a: float, Q: int | None = None, tol: float = 1e-10) -> SpectralBasis:
    """Construct the basis, S matrix and triple-product tensor.

    Raises if the constructed family loses orthonormality beyond tol,
    which signals Q too small or N too large for 64-bit downstream use.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if a <= 0:
        raise ValueError("a must be positive")
    if Q is None:
        Q = max(32, 2 * N + 4)
    if Q < 2 * N + 4:
        raise ValueError(f"Q={Q} too small, need at least {2 * N + 4}")

    with mp.workdps(_GS_DPS):
        moments = _exp_moments(a, 2 * N)
        basis_polys: list[list] = []
        for n in range(N):
            p = [mp.mpf(0)] * (n + 1)
            p[n] = mp.mpf(1)
            # modified Gram-Schmidt with one re-orthogonalization pass
            for _ in range(2):
                for q in basis_polys:
                    c = _poly_inner(p, q, moments)
                    p = [pi - c * (q[i] if i < len(q) else 0) for i, pi in enumerate(p)]
            norm = mp.sqrt(_poly_inner(p, p, moments))
            basis_polys.append([pi / norm for pi in p])

        coeffs = np.zeros((N, N))
        for n, p in enumerate(basis_polys):
            coeffs[n, : len(p)] = [float(c) for c in p]

        S = np.zeros((N, N))
        for m in range(N):
            for n in range(N):
                dq = _poly_deriv_plus(basis_polys[n])
                S[m, n] = float(_poly_inner(dq, basis_polys[m], moments))

    qx, qw = np.polynomial.legendre.leggauss(Q)
    qx, qw = qx * a, qw * a
    basis = SpectralBasis(N=N, a=a, coeffs=coeffs, S=S, T=np.zeros((N, N, N)),
                          quad_x=qx, quad_w=qw)
    psi, dpsi = basis.eval_all(qx)  # (N, Q)
    basis.T = np.einsum("q,mq,nq,lq->mnl", qw, psi, psi, dpsi)

    gram = np.einsum("q,mq,nq->mn", qw, psi, psi)
    if np.max(np.abs(gram - np.eye(N))) > tol:
        raise ArithmeticError(
            f"orthonormality loss {np.max(np.abs(gram - np.eye(N))):.2e} "
            f"exceeds {tol:.1e}: increase Q or reduce N"
        )
    return basis


def fourier_project(samples: np.ndarray, basis: SpectralBasis,
                    src_alphas: np.ndarray, interp: str = "cubic-spline") -> np.ndarray:
    """Project per-source samples g(alpha_l) onto the first N basis functions.

    samples has the source axis first. The samples are interpolated to
    the Gauss-Legendre abscissae, then integrated against each Psi_n.
    Returns an array with leading axis N.
    """
    samples = np.asarray(samples)
    if samples.shape[0] != len(src_alphas):
        raise ValueError("leading axis of samples must match the source count")
    if interp == "cubic-spline":
        if samples.shape[0] < 4:
            raise ValueError("cubic interpolation needs at least 4 sources")
        at_quad = CubicSpline(src_alphas, samples, axis=0, bc_type="natural")(basis.quad_x)
    elif interp == "linear":
        flat = samples.reshape(samples.shape[0], -1)
        cols = [np.interp(basis.quad_x, src_alphas, flat[:, j]) for j in range(flat.shape[1])]
        at_quad = np.stack(cols, axis=1).reshape((len(basis.quad_x),) + samples.shape[1:])
    else:
        raise ValueError(f"unknown interpolation mode {interp!r}")
    psi, _ = basis.eval_all(basis.quad_x)  # (N, Q)
    weighted = psi * basis.quad_w  # (N, Q)
    return np.tensordot(weighted, at_quad, axes=(1, 0))


def x_tilde(x: np.ndarray, x_src: np.ndarray, k: float) -> np.ndarray:
    """Gradient of log u_0: ik (x - x_a)/|x - x_a| - (x - x_a)/|x - x_a|^2."""
    diff = np.asarray(x, dtype=np.float64) - np.asarray(x_src, dtype=np.float64)
    rr = np.linalg.norm(diff, axis=-1, keepdims=True)
    if np.any(rr < 1e-12):
        raise ValueError("evaluation point coincides with the source")
    return 1j * k * diff / rr - diff / rr**2


def x_hat(x: np.ndarray, x_src: np.ndarray, k: float) -> np.ndarray:
    """Derivative of x_tilde with respect to the source abscissa alpha.

    With (dx, dy, dz) = x - x_a and rho = |x - x_a|:
      ik/rho^3 * (-dy^2 - dz^2, dx dy, dx dz)
      - 1/rho^4 * (dx^2 - dy^2 - dz^2, 2 dx dy, 2 dx dz).
    """
    diff = np.asarray(x, dtype=np.float64) - np.asarray(x_src, dtype=np.float64)
    dx, dy, dz = diff[..., 0], diff[..., 1], diff[..., 2]
    rho2 = dx**2 + dy**2 + dz**2
    if np.any(rho2 < 1e-24):
        raise ValueError("evaluation point coincides with the source")
    rho3 = rho2 ** 1.5
    rho4 = rho2**2
    first = np.stack([-(dy**2) - dz**2, dx * dy, dx * dz], axis=-1)
    second = np.stack([dx**2 - dy**2 - dz**2, 2 * dx * dy, 2 * dx * dz], axis=-1)
    return 1j * k * first / rho3[..., None] - second / rho4[..., None]


class GeomTensors:
    """alpha-integrated source-kernel tensors entering the nonlinearity.

    B[m, n] = int Psi_m Psi_n' x_tilde dalpha   (3-vector field)
    C[m, n] = int Psi_m Psi_n  x_hat   dalpha   (3-vector field)

    With cache on, both are stored as (N, N, 3, Z, Z, Z) arrays; with
    cache off the per-pair fields are recomputed on demand with the
    identical quadrature, so results match bit for bit.
    """

    def __init__(self, grid: Grid3, sources: SourceArray, basis: SpectralBasis,
                 k: float, cache: str = "auto", budget_bytes: int = 1 << 30):
        sources.validate_against(grid)
        self.grid = grid
        self.sources = sources
        self.basis = basis
        self.k = k
        X, Y, Z = grid.meshgrid()
        self._pts = np.stack([X, Y, Z], axis=-1)  # (Z,Z,Z,3)
        self._psi_q, self._dpsi_q = basis.eval_all(basis.quad_x)  # (N, Q)
        estimate = 2 * basis.N**2 * 3 * grid.Z_h**3 * 16
        if cache == "auto":
            cache = "on" if estimate <= budget_bytes else "off"
        if cache == "on" and estimate > budget_bytes:
            raise MemoryError(
                f"tensor cache needs ~{estimate / 2**30:.2f} GiB, over the "
                f"{budget_bytes / 2**30:.2f} GiB budget"
            )
        self.cached = cache == "on"
        if self.cached:
            self._B, self._C = self._build_full()
            self._E = self._B + self._C

    def _kernels_at(self, alpha: float) -> tuple[np.ndarray, np.ndarray]:
        """x_tilde and x_hat fields for one source abscissa, shape (3, Z,Z,Z)."""
        src = np.array([alpha, 0.0, -self.sources.d])
        xt = x_tilde(self._pts, src, self.k)
        xh = x_hat(self._pts, src, self.k)
        return np.moveaxis(xt, -1, 0), np.moveaxis(xh, -1, 0)

    def _pair_quad(self, m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
        z = self.grid.Z_h
        b = np.zeros((3, z, z, z), dtype=np.complex128)
        c = np.zeros((3, z, z, z), dtype=np.complex128)
        for l, (alpha, w) in enumerate(zip(self.basis.quad_x, self.basis.quad_w)):
            xt, xh = self._kernels_at(alpha)
            b += (w * self._psi_q[m, l] * self._dpsi_q[n, l]) * xt
            c += (w * self._psi_q[m, l] * self._psi_q[n, l]) * xh
        return b, c

    def _build_full(self) -> tuple[np.ndarray, np.ndarray]:
        N, z = self.basis.N, self.grid.Z_h
        B = np.zeros((N, N, 3, z, z, z), dtype=np.complex128)
        C = np.zeros((N, N, 3, z, z, z), dtype=np.complex128)
        for l, (alpha, w) in enumerate(zip(self.basis.quad_x, self.basis.quad_w)):
            xt, xh = self._kernels_at(alpha)
            wb = w * np.outer(self._psi_q[:, l], self._dpsi_q[:, l])  # (N, N)
            wc = w * np.outer(self._psi_q[:, l], self._psi_q[:, l])
            B += wb[:, :, None, None, None, None] * xt[None, None]
            C += wc[:, :, None, None, None, None] * xh[None, None]
        return B, C

    def B(self, m: int, n: int) -> np.ndarray:
        if self.cached:
            return self._B[m, n]
        return self._pair_quad(m, n)[0]

    def C(self, m: int, n: int) -> np.ndarray:
        if self.cached:
            return self._C[m, n]
        return self._pair_quad(m, n)[1]

    def combined(self, m: int, n: int) -> np.ndarray:
        """B[m, n] + C[m, n], the full linear coefficient of grad v_n."""
        if self.cached:
            return self._E[m, n]
        b, c = self._pair_quad(m, n)
        return b + c

    def combined_full(self) -> np.ndarray | None:
        """(N, N, 3, Z, Z, Z) combined tensor, or None when not cached."""
        return self._E if self.cached else None
