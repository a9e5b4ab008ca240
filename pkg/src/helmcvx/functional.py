"""Carleman-weighted Tikhonov functional on the grid and its exact gradient.

The unknown is the stack V of N complex component fields on the grid.
The cost is

  J(V) = e^{-2 lam (R+r)^2} sum h^3 mu(z) |S lap V + f(grad V)|^2    (interior)
       + sum h^2 ( K0 |V - psi0|^2 + K1 |dV/dz - psi1|^2 )           (Gamma)
       + K2 sum h^2 |V|^2                                            (other faces)
       + gamma sum h^3 ( |V|^2 + |grad V|^2 )

with mu(z) = exp[2 lam (z - r)^2] and the nonlinearity

  f_m = 2 sum_{n,l} T_mnl grad v_n . grad v_l
      + 2 sum_n (B_mn + C_mn) . grad v_n.

All weights are precomputed in balanced form exp[2 lam ((z-r)^2 - (R+r)^2)]
so nothing overflows. The gradient is the exact real gradient of the
discrete J with respect to (Re V, Im V), packed as the complex array
dJ/dRe + i dJ/dIm. Since every residual is holomorphic in V, the packed
gradient is 2 * sum_i w_i r_i conj(d r_i / d v), assembled through the
transposed stencil matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import GeomTensors, SpectralBasis
from .grid import Grid3, RunConfig
from .pipeline import BoundaryData
from .stencils import DiffOps


@dataclass
class CarlemanWeight:
    """exp[2 lam (z - r)^2] per z-node, stored with the balancing factor
    exp[-2 lam (R+r)^2] already applied (so the Gamma plane has weight 1)."""

    lam: float
    r: float
    grid: Grid3

    def __post_init__(self):
        if self.r <= self.grid.R:
            raise ValueError("CWF shift r must exceed R")
        # lam == 0 degenerates to unit weights (plain quasi-reversibility,
        # used only as a CLI ablation); negative lam is always invalid
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        z = self.grid.axis
        self.balanced = np.exp(2.0 * self.lam * ((z - self.r) ** 2 - (self.grid.R + self.r) ** 2))

    def max_min_ratio(self) -> float:
        """mu(-R) / mu(+R) = exp(8 lam R r)."""
        return float(np.exp(8.0 * self.lam * self.grid.R * self.r))


@dataclass
class FunctionalParts:
    residual: float
    bc_dirichlet: float
    bc_neumann: float
    faces: float
    regularization: float

    @property
    def total(self) -> float:
        return (self.residual + self.bc_dirichlet + self.bc_neumann
                + self.faces + self.regularization)

    def as_tuple(self):
        return (self.total, self.residual, self.bc_dirichlet,
                self.bc_neumann, self.faces, self.regularization)


def _check_shapes(V: np.ndarray, N: int, z: int) -> None:
    if V.shape != (N, z, z, z):
        raise ValueError(f"V has shape {V.shape}, expected {(N, z, z, z)}")


def residual(V: np.ndarray, basis: SpectralBasis, geom: GeomTensors,
             ops: DiffOps) -> np.ndarray:
    """S lap V + f(grad V) on interior nodes (zero on faces), (N, Z, Z, Z)."""
    grads, res = _residual_with_grads(V, basis, geom, ops)
    return res


def _residual_with_grads(V, basis, geom, ops):
    N, z = basis.N, ops.grid.Z_h
    _check_shapes(V, N, z)
    if geom.grid.Z_h != z:
        raise ValueError("geometry tensors built on a different grid")
    grads = ops.grad(V)  # (N, 3, Z, Z, Z)
    laps = ops.lap(V)  # (N, Z, Z, Z)
    res = np.einsum("mn,nxyz->mxyz", basis.S, laps)
    pair = np.einsum("naxyz,laxyz->nlxyz", grads, grads)
    res += 2.0 * np.einsum("mnl,nlxyz->mxyz", basis.T, pair)
    E = geom.combined_full()
    if E is not None:
        res += 2.0 * np.einsum("mnaxyz,naxyz->mxyz", E, grads)
    else:
        for m in range(N):
            for n in range(N):
                res[m] += 2.0 * np.einsum("axyz,axyz->xyz", geom.combined(m, n), grads[n])
    res *= ops.interior_mask
    return grads, res


def _weights(cwf: CarlemanWeight, ops: DiffOps) -> np.ndarray:
    """Residual-term weight h^3 mu_balanced(z) on interior nodes."""
    h = ops.grid.h
    return h**3 * cwf.balanced[None, None, :] * ops.interior_mask


def eval_J(V: np.ndarray, data: BoundaryData, cwf: CarlemanWeight,
           cfg: RunConfig, basis: SpectralBasis, geom: GeomTensors,
           ops: DiffOps) -> FunctionalParts:
    parts, _ = _eval_impl(V, data, cwf, cfg, basis, geom, ops, want_grad=False)
    return parts


def grad_J(V: np.ndarray, data: BoundaryData, cwf: CarlemanWeight,
           cfg: RunConfig, basis: SpectralBasis, geom: GeomTensors,
           ops: DiffOps) -> np.ndarray:
    _, grad = _eval_impl(V, data, cwf, cfg, basis, geom, ops, want_grad=True)
    return grad


def eval_J_grad(V, data, cwf, cfg, basis, geom, ops):
    return _eval_impl(V, data, cwf, cfg, basis, geom, ops, want_grad=True)


def _eval_impl(V, data, cwf, cfg, basis, geom, ops, want_grad):
    N, z, h = basis.N, ops.grid.Z_h, ops.grid.h
    _check_shapes(V, N, z)
    grads, res = _residual_with_grads(V, basis, geom, ops)
    w = _weights(cwf, ops)  # (Z, Z, Z)

    j_res = float(np.sum(w * np.abs(res) ** 2))

    e0 = V[:, :, :, 0] - data.psi0_gamma
    j_bc0 = cfg.K0 * h**2 * float(np.sum(np.abs(e0) ** 2))
    e1 = ops.dz_gamma(V) - data.psi1
    j_bc1 = cfg.K1 * h**2 * float(np.sum(np.abs(e1) ** 2))

    face_slabs = (V[:, :, :, -1], V[:, 0, :, :], V[:, -1, :, :],
                  V[:, :, 0, :], V[:, :, -1, :])
    j_faces = cfg.K2 * h**2 * float(sum(np.sum(np.abs(s) ** 2) for s in face_slabs))

    j_reg = cfg.gamma * h**3 * float(np.sum(np.abs(V) ** 2) + np.sum(np.abs(grads) ** 2))

    parts = FunctionalParts(j_res, j_bc0, j_bc1, j_faces, j_reg)
    if not np.isfinite(parts.total):
        raise FloatingPointError(f"non-finite functional value: {parts}")
    if not want_grad:
        return parts, None

    grad = np.zeros_like(V)
    wr = w[None] * res  # (N, Z, Z, Z)

    # residual term, Laplacian block: 2 sum_m s_mj lap^T(w r_m)
    grad += 2.0 * ops.lap_adj(np.einsum("mj,mxyz->jxyz", basis.S, wr))

    # residual term, gradient block: 2 grad^T( sum_m w r_m conj(a_mj) )
    # with a_mj = 2 sum_l (T_mjl + T_mlj) grad v_l + 2 (B+C)_mj
    t_sym = basis.T + basis.T.transpose(0, 2, 1)  # (m, j, l)
    mixed = np.einsum("mjl,mxyz->jlxyz", t_sym, wr)
    vec = 2.0 * np.einsum("jlxyz,laxyz->jaxyz", mixed, np.conj(grads))
    E = geom.combined_full()
    if E is not None:
        vec += 2.0 * np.einsum("mjaxyz,mxyz->jaxyz", np.conj(E), wr)
    else:
        for j in range(N):
            acc = np.zeros((3, z, z, z), dtype=np.complex128)
            for m in range(N):
                acc += wr[m] * np.conj(geom.combined(m, j))
            vec[j] += 2.0 * acc
    grad += 2.0 * ops.grad_adj(vec)

    # Gamma data terms
    grad[:, :, :, 0] += 2.0 * cfg.K0 * h**2 * e0
    grad[:, :, :, 0] += -2.0 * cfg.K1 * h * e1
    grad[:, :, :, 1] += 2.0 * cfg.K1 * h * e1

    # face penalties
    c2 = 2.0 * cfg.K2 * h**2
    grad[:, :, :, -1] += c2 * V[:, :, :, -1]
    grad[:, 0, :, :] += c2 * V[:, 0, :, :]
    grad[:, -1, :, :] += c2 * V[:, -1, :, :]
    grad[:, :, 0, :] += c2 * V[:, :, 0, :]
    grad[:, :, -1, :] += c2 * V[:, :, -1, :]

    # H^1 regularization
    grad += 2.0 * cfg.gamma * h**3 * (V + ops.grad_adj(grads))

    return parts, grad


def directional_derivative(grad: np.ndarray, direction: np.ndarray) -> float:
    """Real inner product matching the packed complex gradient layout."""
    return float(np.sum(grad.real * direction.real + grad.imag * direction.imag))


def convexity_probe(data: BoundaryData, cwf: CarlemanWeight, cfg: RunConfig,
                    basis: SpectralBasis, geom: GeomTensors, ops: DiffOps,
                    n_pairs: int = 100, seed: int = 0, amplitude: float = 1.0):
    """Empirical strict-convexity check via Bregman gaps.

    Draws random pairs (V1, V2) sharing boundary values on the whole
    boundary and z-derivatives at Gamma (the difference vanishes on all
    faces and on the first two z-layers), and reports gap statistics
    J(V2) - J(V1) - <J'(V1), V2 - V1>.
    """
    rng = np.random.default_rng(seed)
    N, z = basis.N, ops.grid.Z_h
    gaps, h1_gaps = [], []
    for _ in range(n_pairs):
        v1 = amplitude * (rng.uniform(-1, 1, (N, z, z, z))
                          + 1j * rng.uniform(-1, 1, (N, z, z, z)))
        dv = amplitude * (rng.uniform(-1, 1, (N, z, z, z))
                          + 1j * rng.uniform(-1, 1, (N, z, z, z)))
        dv[:, 0], dv[:, -1] = 0.0, 0.0
        dv[:, :, 0], dv[:, :, -1] = 0.0, 0.0
        dv[:, :, :, -1] = 0.0
        dv[:, :, :, 0], dv[:, :, :, 1] = 0.0, 0.0
        j1, g1 = eval_J_grad(v1, data, cwf, cfg, basis, geom, ops)
        j2 = eval_J(v1 + dv, data, cwf, cfg, basis, geom, ops)
        gap = j2.total - j1.total - directional_derivative(g1, dv)
        gaps.append(gap)
        h1 = ops.grid.h**3 * (np.sum(np.abs(dv) ** 2) + np.sum(np.abs(ops.grad(dv)) ** 2))
        h1_gaps.append(gap - cfg.gamma * float(h1))
    gaps = np.asarray(gaps)
    h1_gaps = np.asarray(h1_gaps)
    return {
        "n_pairs": n_pairs,
        "min_gap": float(gaps.min()),
        "median_gap": float(np.median(gaps)),
        "frac_nonnegative": float(np.mean(gaps >= 0.0)),
        "frac_above_h1": float(np.mean(h1_gaps >= -1e-12)),
    }
