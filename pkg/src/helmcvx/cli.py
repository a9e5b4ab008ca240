"""Batch command-line front end: simulate, invert, metrics, diagnostics.

Heavy imports are deferred into the command handlers so --threads can
pin the BLAS/OpenMP pool sizes before the numeric stack loads.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_SOLVER = 4
EXIT_NUMERIC = 5

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


@dataclass
class RunManifest:
    """Reproducibility record written atomically at the end of a run."""

    command: str
    config: dict
    inputs: dict
    outputs: dict
    seed: int
    version: str
    timings: dict = field(default_factory=dict)

    def save(self, path: Path) -> None:
        import yaml

        doc = {
            "command": self.command,
            "version": self.version,
            "seed": self.seed,
            "config": self.config,
            "inputs": {k: str(v) for k, v in self.inputs.items()},
            "outputs": {k: str(v) for k, v in self.outputs.items()},
            "timings_s": {k: round(v, 3) for k, v in self.timings.items()},
        }
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w") as fh:
            yaml.safe_dump(doc, fh, sort_keys=False)
        os.replace(tmp, path)


def _version() -> str:
    from importlib.metadata import PackageNotFoundError, version

    try:
        return version("helmcvx")
    except PackageNotFoundError:
        return "unknown"


def _load_config(args):
    from .grid import RunConfig

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "forward_refine", None) is not None:
        overrides["forward_refine"] = args.forward_refine
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    from . import io as fio
    from .forward import simulate
    from .report import write_source_summary_csv
    from .targets import TargetSpec

    cfg = _load_config(args)
    target = TargetSpec.load(args.geometry) if args.geometry else TargetSpec.from_dict({})
    out = _outdir(args)
    grid, sources = cfg.grid(), cfg.sources()
    c_true = target.field(grid)

    t0 = time.perf_counter()
    data = simulate(c_true, sources, cfg.k, delta=cfg.delta, seed=cfg.seed,
                    forward_refine=cfg.forward_refine)
    t_solve = time.perf_counter() - t0

    data_path = out / "data.cvxf"
    truth_path = out / "c_true.cvxf"
    summary_path = out / "source_summary.csv"
    data.save(data_path)
    fio.write_field(c_true, truth_path)
    write_source_summary_csv(sources.alphas, data.F, summary_path)

    manifest = RunManifest("simulate", cfg.to_dict(),
                           {"geometry": args.geometry or "<none>"},
                           {"data": data_path, "c_true": truth_path,
                            "summary": summary_path},
                           cfg.seed, _version(), {"forward": t_solve})
    manifest.save(out / "manifest.yaml")
    print(f"wrote {data_path} ({sources.n_src} sources, Z_h={grid.Z_h})")
    return EXIT_OK


def cmd_invert(args) -> int:
    from . import io as fio
    from .forward import MeasuredData
    from .inversion import run_inversion
    from .report import (render_slice_png, render_trace_png, write_quality_csv,
                         write_slice_csv, write_trace_csv)
    from .vtk import export_vtk

    cfg = _load_config(args)
    if args.lam is not None and args.lam > 0:
        cfg = cfg.with_overrides(lam=args.lam)
    lam_override = 0.0 if args.lam == 0 else None
    out = _outdir(args)

    data = MeasuredData.load(args.data, cfg.sources(), cfg.k, cfg.delta)
    c_true = None
    if args.truth:
        c_true = fio.read_field(args.truth)

    t0 = time.perf_counter()
    result = run_inversion(data, cfg, step2=not args.no_step2,
                           lam_override=lam_override, c_true=c_true)
    t_invert = time.perf_counter() - t0

    paths = {
        "c_comp": out / "c_comp.cvxf",
        "c_comp_vtk": out / "c_comp.vtk",
        "slice_csv": out / "slice_x0.csv",
        "slice_png": out / "slice_x0.png",
        "trace_csv": out / "descent_trace.csv",
        "trace_png": out / "descent_trace.png",
        "quality": out / "quality.csv",
    }
    fio.write_field(result.c_comp, paths["c_comp"])
    export_vtk(result.c_comp, paths["c_comp_vtk"], name="c_comp")
    write_slice_csv(result.c_comp, paths["slice_csv"])
    render_slice_png(result.c_comp, paths["slice_png"])
    write_trace_csv(result.trace1, paths["trace_csv"])
    render_trace_png(result.trace1, paths["trace_png"])
    if result.trace2 is not None:
        write_trace_csv(result.trace2, out / "descent_trace_step2.csv")
        render_trace_png(result.trace2, out / "descent_trace_step2.png",
                         title="descent history, step 2")
    write_quality_csv(result.report, paths["quality"])

    manifest = RunManifest("invert", cfg.to_dict(),
                           {"data": args.data, "truth": args.truth or "<none>"},
                           paths, cfg.seed, _version(), {"invert": t_invert})
    manifest.save(out / "manifest.yaml")

    if result.warning:
        print(f"warning: {result.warning}", file=sys.stderr)
    for name, value in result.report.rows():
        print(f"{name} = {value:.6g}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    from . import io as fio
    from .inversion import quality
    from .report import write_quality_csv

    recon = fio.read_field(args.recon)
    truth = fio.read_field(args.truth) if args.truth else None
    report = quality(recon, truth)
    out = _outdir(args)
    write_quality_csv(report, out / "quality.csv")
    for name, value in report.rows():
        print(f"{name} = {value:.6g}")
    return EXIT_OK


def cmd_basis(args) -> int:
    import numpy as np

    from . import io as fio
    from .basis import build_basis

    cfg = _load_config(args)
    basis = build_basis(cfg.N, cfg.a, cfg.Q)
    out = _outdir(args)
    fio.write_matrix_csv(out / "S.csv", basis.S)
    fio.write_matrix_csv(out / "T.csv", basis.T.reshape(cfg.N, -1))
    fio.write_matrix_csv(out / "coeffs.csv", basis.coeffs)

    psi, _ = basis.eval_all(basis.quad_x)
    gram = np.einsum("q,mq,nq->mn", basis.quad_w, psi, psi)
    dev = float(np.max(np.abs(gram - np.eye(cfg.N))))
    off = float(np.max(np.abs(np.tril(basis.S, -1)))) if cfg.N > 1 else 0.0
    print(f"N = {cfg.N}, a = {cfg.a}")
    print(f"gram deviation from identity = {dev:.3e}")
    print(f"max sub-diagonal entry of S = {off:.3e}")
    print(f"det(S) = {np.linalg.det(basis.S):.12g}")
    return EXIT_OK


def _random_instance(cfg, size: int, order: int, seed: int):
    """Small random cost-functional instance for diagnostics."""
    import numpy as np

    from .basis import GeomTensors, build_basis
    from .grid import Grid3, SourceArray
    from .pipeline import BoundaryData
    from .stencils import DiffOps

    grid = Grid3(cfg.R, size)
    sources = SourceArray(cfg.a, cfg.d, cfg.n_src, cfg.Q)
    basis = build_basis(order, cfg.a, cfg.Q)
    geom = GeomTensors(grid, sources, basis, cfg.k, cache=cfg.cache_tensors)
    ops = DiffOps(grid)
    rng = np.random.default_rng(seed)
    shape = (order, size, size)
    bdata = BoundaryData(grid, order,
                         rng.standard_normal(shape) + 1j * rng.standard_normal(shape),
                         rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return grid, sources, basis, geom, ops, bdata, rng


def cmd_gradcheck(args) -> int:
    import numpy as np

    from . import io as fio
    from .functional import CarlemanWeight, directional_derivative, eval_J, eval_J_grad

    cfg = _load_config(args)
    grid, _, basis, geom, ops, bdata, rng = _random_instance(
        cfg, args.size, args.order, cfg.seed)
    cwf = CarlemanWeight(cfg.lam, cfg.r, grid)
    shape = (args.order, args.size, args.size, args.size)
    V = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    _, grad = eval_J_grad(V, bdata, cwf, cfg, basis, geom, ops)

    t = 1e-6
    rows = []
    worst = 0.0
    for i in range(args.directions):
        d = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        d /= np.sqrt(np.sum(np.abs(d) ** 2))
        jp = eval_J(V + t * d, bdata, cwf, cfg, basis, geom, ops).total
        jm = eval_J(V - t * d, bdata, cwf, cfg, basis, geom, ops).total
        fd = (jp - jm) / (2 * t)
        an = directional_derivative(grad, d)
        rel = abs(fd - an) / max(abs(fd), 1e-300)
        worst = max(worst, rel)
        rows.append((i, an, fd, rel))

    out = _outdir(args)
    fio.write_csv(out / "gradcheck.csv",
                  ["direction", "analytic", "finite_difference", "rel_error"], rows)
    print(f"max relative error over {args.directions} directions = {worst:.3e}")
    return EXIT_OK


def cmd_convexity(args) -> int:
    from . import io as fio
    from .functional import CarlemanWeight, convexity_probe

    cfg = _load_config(args)
    grid, _, basis, geom, ops, bdata, _ = _random_instance(
        cfg, args.size, args.order, cfg.seed)
    lam = args.lam if args.lam is not None else cfg.lam
    cwf = CarlemanWeight(lam, cfg.r, grid)
    stats = convexity_probe(bdata, cwf, cfg, basis, geom, ops,
                            n_pairs=args.pairs, seed=cfg.seed)
    out = _outdir(args)
    fio.write_csv(out / "convexity.csv", list(stats), [list(stats.values())])
    for key, value in stats.items():
        print(f"{key} = {value:.6g}" if isinstance(value, float) else f"{key} = {value}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="helmcvx",
        description="Dielectric reconstruction from backscattered Helmholtz "
                    "data via Carleman-weighted convex optimization.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, data=False, geometry=False):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="RNG seed override")
        p.add_argument("--threads", type=int, default=None,
                       help="cap the numeric thread pools")
        if data:
            p.add_argument("--data", required=True, help="measured-data CVXF file")
        if geometry:
            p.add_argument("--geometry", help="YAML target geometry")

    p = sub.add_parser("simulate", help="generate synthetic measured data")
    common(p, geometry=True)
    p.add_argument("--forward-refine", type=int, default=None,
                   help="data-generation grid refinement factor")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("invert", help="reconstruct the dielectric field")
    common(p, data=True)
    p.add_argument("--truth", help="true dielectric CVXF file for error metrics")
    p.add_argument("--no-step2", action="store_true",
                   help="stop after the first reconstruction pass")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="weight exponent override (0 disables the weight)")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("metrics", help="quality metrics for a reconstruction")
    common(p)
    p.add_argument("--recon", required=True, help="reconstruction CVXF file")
    p.add_argument("--truth", help="true dielectric CVXF file")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("basis", help="dump the spectral basis matrices")
    common(p)
    p.set_defaults(func=cmd_basis)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    common(p)
    p.add_argument("--size", type=int, default=7, help="grid nodes per axis")
    p.add_argument("--order", type=int, default=2, help="basis truncation order")
    p.add_argument("--directions", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("convexity-probe", help="empirical Bregman-gap statistics")
    common(p)
    p.add_argument("--size", type=int, default=9, help="grid nodes per axis")
    p.add_argument("--order", type=int, default=2, help="basis truncation order")
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.set_defaults(func=cmd_convexity)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_VALIDATION
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)

    from . import io as fio

    try:
        return args.func(args)
    except fio.FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FileNotFoundError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except RuntimeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ArithmeticError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
