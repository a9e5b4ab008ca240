"""Two-step reconstruction of the dielectric field.

Step 1 starts the descent from a linear extension of the Gamma data
damped by a bump in z, recovers a first dielectric image, thresholds it
at 70% of the peak contrast and smooths. Step 2 re-solves the forward
problem with that image, restarts the descent from the resulting
log-field restricted to the detected target box, and recovers the final
image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .basis import GeomTensors, SpectralBasis, build_basis, x_tilde
from .forward import LSOperator, MeasuredData, incident_field
from .functional import CarlemanWeight, FunctionalParts, eval_J_grad
from .grid import Grid3, RunConfig, ScalarField, SourceArray
from .pipeline import BoundaryData, boundary_coeffs, log_ratio, fourier_project
from .stencils import DiffOps

SUPPORT_FRACTION = 0.05  # isosurface convention: 5% of the peak contrast
BOX_PADDING_CELLS = 2


@dataclass
class DescentTrace:
    j_values: list = field(default_factory=list)
    parts: list = field(default_factory=list)
    etas: list = field(default_factory=list)
    stop_reason: str = ""

    @property
    def iterations(self) -> int:
        return len(self.j_values)

    def record(self, parts_: FunctionalParts, eta: float) -> None:
        self.j_values.append(parts_.total)
        self.parts.append(parts_)
        self.etas.append(eta)


@dataclass
class Reconstruction:
    c: ScalarField
    stage: str  # step1-raw | step1-post | step2-final | smoothed
    config: RunConfig
    warning: str = ""


@dataclass
class QualityReport:
    max_c_comp: float
    center: tuple[float, float, float] | None
    lowest_point: tuple[float, float, float] | None
    max_c_true: float | None = None
    e_max_percent: float | None = None

    def rows(self):
        yield ("max_c_comp", self.max_c_comp)
        if self.max_c_true is not None:
            yield ("max_c_true", self.max_c_true)
            yield ("E_max_percent", self.e_max_percent)
        if self.center is not None:
            yield ("center_x", self.center[0])
            yield ("center_y", self.center[1])
            yield ("center_z", self.center[2])
        if self.lowest_point is not None:
            yield ("lowest_x", self.lowest_point[0])
            yield ("lowest_y", self.lowest_point[1])
            yield ("lowest_z", self.lowest_point[2])


def bump_z(z: np.ndarray, R: float) -> np.ndarray:
    """exp((z+R)^2 / ((z+R)^2 - (R-1)^2)) for z < -1, else 0.

    Equals 1 with zero slope at z = -R and vanishes for z >= -1."""
    z = np.asarray(z, dtype=np.float64)
    out = np.zeros_like(z)
    sel = z < -1.0
    t2 = (z[sel] + R) ** 2
    out[sel] = np.exp(t2 / (t2 - (R - 1.0) ** 2))
    return out


def initial_guess(data: BoundaryData, grid: Grid3) -> np.ndarray:
    """Linear-in-depth extension of the Gamma data, damped by bump_z."""
    zax = grid.axis
    chi = bump_z(zax, grid.R)
    lin = (data.psi0_gamma[:, :, :, None]
           + data.psi1[:, :, :, None] * (zax + grid.R)[None, None, None, :])
    return lin * chi[None, None, None, :]


def descend(V0: np.ndarray, objective, cfg: RunConfig
            ) -> tuple[np.ndarray, DescentTrace]:
    """Gradient descent with step halving on increase and rollback.

    objective(V) -> (FunctionalParts, grad). A trial step that raises
    the cost is rolled back before the step is halved. Stops when
    eta < eta_floor, |dJ| < dj_floor, or the iteration cap.
    """
    trace = DescentTrace()
    V = V0.copy()
    parts, grad = objective(V)
    j_cur = parts.total
    eta = cfg.eta1
    trace.record(parts, eta)
    if j_cur == 0.0:
        trace.stop_reason = "dJ-floor"
        return V, trace
    for _ in range(cfg.max_iters):
        trial = V - eta * grad
        parts_try, grad_try = objective(trial)
        if parts_try.total >= j_cur:
            eta *= cfg.eta_halving
            if eta < cfg.eta_floor:
                trace.stop_reason = "eta-floor"
                return V, trace
            continue
        dj = j_cur - parts_try.total
        V, parts, grad = trial, parts_try, grad_try
        j_cur = parts.total
        trace.record(parts, eta)
        if dj < cfg.dj_floor:
            trace.stop_reason = "dJ-floor"
            return V, trace
    trace.stop_reason = "max-iter"
    return V, trace


def recover_c(V: np.ndarray, basis: SpectralBasis, sources: SourceArray,
              k: float, grid: Grid3, ops: DiffOps,
              mask: np.ndarray | None = None) -> ScalarField:
    """Dielectric field from the coefficient stack:
    c = mean over sources of |-(lap v + (grad v)^2 + 2 grad v . xt)/k^2| + 1.

    Faces (where the Laplacian stencil is undefined) and nodes outside
    the optional mask are returned as background 1."""
    psi, _ = basis.eval_all(sources.alphas)  # (N, l)
    v = np.tensordot(psi.T, V, axes=(1, 0))  # (l, Z, Z, Z)
    X, Y, Z = grid.meshgrid()
    pts = np.stack([X, Y, Z], axis=-1)
    acc = np.zeros((grid.Z_h,) * 3)
    for i, pos in enumerate(sources.positions()):
        lap = ops.lap(v[i])
        gr = ops.grad(v[i])  # (3, Z, Z, Z)
        xt = np.moveaxis(x_tilde(pts, pos, k), -1, 0)
        expr = lap + np.einsum("axyz,axyz->xyz", gr, gr) \
            + 2.0 * np.einsum("axyz,axyz->xyz", gr, xt)
        acc += np.abs(-expr / k**2)
    contrast = acc / sources.n_src
    contrast *= ops.interior_mask
    if mask is not None:
        contrast = contrast * mask
    return ScalarField(grid, contrast + 1.0)


def smooth_with_rescale(contrast: np.ndarray, sigma_cells: float = 1.0
                        ) -> tuple[np.ndarray, float]:
    """Gaussian smoothing (3x3x3 kernel, sigma = one grid step) followed
    by the peak-restoring rescale; returns (smoothed contrast, p_hat).

    The cube faces are reset to zero after filtering: the dielectric is
    background outside the cube, so mass the kernel spreads onto the
    boundary planes is an artifact, not signal."""
    peak = contrast.max()
    if peak < 1e-9:
        return contrast.copy(), 0.0
    smoothed = gaussian_filter(contrast, sigma=sigma_cells, truncate=1.0)
    for axis in range(smoothed.ndim):
        idx = [slice(None)] * smoothed.ndim
        for end in (0, -1):
            idx[axis] = end
            smoothed[tuple(idx)] = 0.0
    p_hat = peak / smoothed.max() - 1.0
    return smoothed * (1.0 + p_hat), p_hat


def postprocess_step1(c_raw: ScalarField) -> ScalarField:
    """Threshold at 70% of the peak contrast, smooth, restore the peak."""
    contrast = c_raw.values - 1.0
    peak = contrast.max()
    if peak < 1e-9:
        return ScalarField(c_raw.grid, c_raw.values.copy())
    kept = np.where(contrast >= 0.7 * peak, contrast, 0.0)
    smoothed, _ = smooth_with_rescale(kept)
    return ScalarField(c_raw.grid, smoothed + 1.0)


def target_box(contrast: np.ndarray, grid: Grid3
               ) -> tuple[float, float, float] | None:
    """Half-widths (b_x, b_y, b_z) of the search box around the detected
    support (5% of the peak, padded by two cells); None when empty."""
    peak = contrast.max()
    if peak < 1e-9:
        return None
    X, Y, Z = grid.meshgrid()
    sel = contrast >= SUPPORT_FRACTION * peak
    pad = BOX_PADDING_CELLS * grid.h
    b_x = min(np.abs(X[sel]).max() + pad, grid.R)
    b_y = min(np.abs(Y[sel]).max() + pad, grid.R)
    z_top = Z[sel].max() + pad
    b_z = max(-z_top, grid.h)  # box is -R <= z <= -b_z
    return float(b_x), float(b_y), float(b_z)


def bump_box(grid: Grid3, b_x: float, b_y: float, b_z: float) -> np.ndarray:
    """Product bump supported on the box {|x|<b_x, |y|<b_y, -R<=z<-b_z}.

    Each factor equals 1 at the box face z = -R center line and decays
    to 0 at the lateral faces and at z = -b_z; the maximum value 1 is
    attained at (0, 0, -R)."""
    X, Y, Z = grid.meshgrid()
    out = np.zeros((grid.Z_h,) * 3)
    inside = (np.abs(X) < b_x) & (np.abs(Y) < b_y) & (Z < -b_z)
    x, y, z = X[inside], Y[inside], Z[inside]
    t2 = (z + grid.R) ** 2
    out[inside] = np.exp(x**2 / (x**2 - b_x**2)
                         + y**2 / (y**2 - b_y**2)
                         + t2 / (t2 - (grid.R - b_z) ** 2))
    return out


class InversionWorkspace:
    """Shared pieces of a full inversion on one grid."""

    def __init__(self, data: MeasuredData, cfg: RunConfig):
        self.data = data
        self.cfg = cfg
        self.grid = data.grid
        self.sources = data.sources
        self.ops = DiffOps(self.grid)
        self.basis = build_basis(cfg.N, cfg.a, cfg.Q)
        self.geom = GeomTensors(self.grid, self.sources, self.basis,
                                cfg.k, cache=cfg.cache_tensors)
        self.bdata = boundary_coeffs(data, self.basis)

    def objective(self, lam: float):
        cwf = CarlemanWeight(lam, self.cfg.r, self.grid)

        def fn(V):
            return eval_J_grad(V, self.bdata, cwf, self.cfg, self.basis,
                               self.geom, self.ops)

        return fn


@dataclass
class InversionResult:
    c_comp: ScalarField
    step1_raw: ScalarField
    step1_post: ScalarField
    trace1: DescentTrace
    trace2: DescentTrace | None
    report: QualityReport
    warning: str = ""


def run_inversion(data: MeasuredData, cfg: RunConfig, *, step2: bool = True,
                  lam_override: float | None = None,
                  c_true: ScalarField | None = None,
                  workspace: InversionWorkspace | None = None) -> InversionResult:
    ws = workspace or InversionWorkspace(data, cfg)
    lam = cfg.lam if lam_override is None else lam_override
    objective = ws.objective(lam)
    grid = ws.grid

    # Step 1: descent from the damped linear extension of the Gamma data
    v_start = initial_guess(ws.bdata, grid)
    v_min, trace1 = descend(v_start, objective, cfg)

    # search region for shallow targets: -R <= z <= -R + 2
    Z = grid.meshgrid()[2]
    omega1 = (Z <= -grid.R + 2.0).astype(np.float64)
    c_raw = recover_c(v_min, ws.basis, ws.sources, cfg.k, grid, ws.ops, mask=omega1)
    c_post = postprocess_step1(c_raw)

    warning = ""
    trace2 = None
    if step2:
        box = target_box(c_post.values - 1.0, grid)
        if box is None:
            warning = "step 1 found no target support; returning the step-1 image"
            c_comp = c_post
        else:
            c_comp, trace2 = _step2(ws, cfg, objective, c_post, box)
    else:
        c_comp = c_post

    report = quality(c_comp, c_true)
    return InversionResult(c_comp, c_raw, c_post, trace1, trace2, report, warning)


def _step2(ws: InversionWorkspace, cfg: RunConfig, objective,
           c_temp: ScalarField, box) -> tuple[ScalarField, DescentTrace]:
    grid, sources = ws.grid, ws.sources
    op = LSOperator(grid, cfg.k, np.maximum(c_temp.values - 1.0, 0.0))
    v_hats = []
    for pos in sources.positions():
        u, _ = op.solve(pos)
        u0 = incident_field(grid, pos, cfg.k)
        v_hats.append(log_ratio(u, u0, unwrap_mode="3d"))
    v_hat_n = fourier_project(np.stack(v_hats), ws.basis, sources.alphas)

    chi = bump_box(grid, *box)
    v1 = v_hat_n * chi[None]
    v_min, trace2 = descend(v1, objective, cfg)

    X, Y, Z = grid.meshgrid()
    b_x, b_y, b_z = box
    omega2 = ((np.abs(X) <= b_x) & (np.abs(Y) <= b_y) & (Z <= -b_z)).astype(np.float64)
    c_final = recover_c(v_min, ws.basis, sources, cfg.k, grid, ws.ops, mask=omega2)
    smoothed, _ = smooth_with_rescale(np.abs(c_final.values - 1.0))
    return ScalarField(grid, smoothed + 1.0), trace2


def quality(c_comp: ScalarField, c_true: ScalarField | None = None) -> QualityReport:
    grid = c_comp.grid
    contrast = c_comp.values - 1.0
    peak = contrast.max()
    max_comp = float(c_comp.values.max())

    center = lowest = None
    if peak >= 1e-9:
        X, Y, Z = grid.meshgrid()
        sel = contrast >= SUPPORT_FRACTION * peak
        wsum = contrast[sel].sum()
        center = (float((X[sel] * contrast[sel]).sum() / wsum),
                  float((Y[sel] * contrast[sel]).sum() / wsum),
                  float((Z[sel] * contrast[sel]).sum() / wsum))
        s_min = int(np.argwhere(sel)[:, 2].min())
        plane = sel[:, :, s_min]
        wplane = contrast[:, :, s_min] * plane
        lowest = (float((X[:, :, s_min] * wplane).sum() / wplane.sum()),
                  float((Y[:, :, s_min] * wplane).sum() / wplane.sum()),
                  float(grid.axis[s_min]))

    if c_true is None:
        return QualityReport(max_comp, center, lowest)
    max_true = float(c_true.values.max())
    e_max = abs(max_true - max_comp) / max_true * 100.0
    return QualityReport(max_comp, center, lowest, max_true, e_max)


def e_max_percent(max_true: float, max_comp: float) -> float:
    """|max c_true - max c_comp| / max c_true * 100%."""
    return abs(max_true - max_comp) / max_true * 100.0
