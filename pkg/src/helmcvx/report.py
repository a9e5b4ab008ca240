"""Run artifacts: delimited data files and the matching rendered figures.

Every report product comes in pairs: a CSV holding the raw numbers (17
significant digits) and a PNG rendering of the same data, written side
by side so a run directory is both machine- and eye-readable.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .grid import ScalarField  # noqa: E402
from .inversion import DescentTrace, QualityReport  # noqa: E402
from . import io as fio  # noqa: E402


def slice_x0(fld: ScalarField) -> tuple[np.ndarray, int]:
    """The {x = 0} cross-section (q, s indexed) and the plane index used."""
    p0 = int(np.argmin(np.abs(fld.grid.axis)))
    return fld.values[p0], p0


def write_slice_csv(fld: ScalarField, path: str | Path) -> None:
    plane, p0 = slice_x0(fld)
    ax = fld.grid.axis
    rows = ((ax[q], ax[s], plane[q, s])
            for q in range(len(ax)) for s in range(len(ax)))
    fio.write_csv(path, ["y", "z", "value"], rows)


def render_slice_png(fld: ScalarField, path: str | Path,
                     title: str = "cross-section at x = 0") -> None:
    plane, _ = slice_x0(fld)
    R = fld.grid.R
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(plane.T, origin="lower", extent=(-R, R, -R, R),
                   cmap="viridis", aspect="equal")
    fig.colorbar(im, ax=ax, label="dielectric constant")
    ax.set_xlabel("y")
    ax.set_ylabel("z")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_trace_csv(trace: DescentTrace, path: str | Path) -> None:
    rows = ((i, p.total, p.residual, p.bc_dirichlet, p.bc_neumann,
             p.faces, p.regularization, eta)
            for i, (p, eta) in enumerate(zip(trace.parts, trace.etas)))
    fio.write_csv(path, ["iter", "J", "residual", "bc_dirichlet",
                         "bc_neumann", "faces", "regularization", "eta"], rows)


def render_trace_png(trace: DescentTrace, path: str | Path,
                     title: str = "descent history") -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogy(range(trace.iterations), trace.j_values, marker=".", lw=1)
    ax.set_xlabel("accepted iteration")
    ax.set_ylabel("cost")
    ax.set_title(f"{title} ({trace.stop_reason})")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_quality_csv(report: QualityReport, path: str | Path) -> None:
    fio.write_csv(path, ["metric", "value"], report.rows())


def write_source_summary_csv(alphas: np.ndarray, F: np.ndarray,
                             path: str | Path) -> None:
    """Per-source peak of |F| on the measurement face."""
    rows = ((i, alphas[i], float(np.abs(F[i]).max()))
            for i in range(len(alphas)))
    fio.write_csv(path, ["source", "alpha", "max_abs_F"], rows)
