"""Domain geometry, field containers and run configuration.

Everything is dimensionless (spatial unit = 10 cm in the intended radar
application). The cube Omega = (-R, R)^3 is discretized with Z_h nodes
per axis; the measurement face Gamma is the z = -R face (s-index 0).
Memory layout of a field is (src, p, q, s) with s the z index.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml


@dataclass(frozen=True)
class Grid3:
    """Uniform cubic grid on [-R, R]^3 with Z_h nodes per axis."""

    R: float
    Z_h: int

    def __post_init__(self):
        if self.R <= 0:
            raise ValueError(f"R must be positive, got {self.R}")
        if self.Z_h < 5:
            raise ValueError(f"Z_h must be at least 5, got {self.Z_h}")

    @property
    def h(self) -> float:
        return 2.0 * self.R / (self.Z_h - 1)

    @property
    def axis(self) -> np.ndarray:
        # exactly -R + i*h, no accumulated rounding
        return -self.R + np.arange(self.Z_h) * self.h

    def node(self, p: int, q: int, s: int) -> tuple[float, float, float]:
        h = self.h
        return (-self.R + p * h, -self.R + q * h, -self.R + s * h)

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Node coordinates as three (Z_h, Z_h, Z_h) arrays indexed (p, q, s)."""
        ax = self.axis
        return np.meshgrid(ax, ax, ax, indexing="ij")

    def refined(self, factor: int) -> "Grid3":
        """Grid with the same extent whose nodes contain this grid's nodes."""
        if factor < 1:
            raise ValueError("refinement factor must be >= 1")
        return Grid3(self.R, factor * (self.Z_h - 1) + 1)


@dataclass(frozen=True)
class SourceArray:
    """Point sources (alpha_i, 0, -d) on the segment [-a, a] x {0} x {-d},
    plus the Gauss-Legendre rule used for every alpha-integral."""

    a: float
    d: float
    n_src: int
    Q: int = 32

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("source half-length a must be positive")
        if self.n_src < 2:
            raise ValueError("need at least two sources")
        if self.Q < 2:
            raise ValueError("need at least two quadrature nodes")

    def validate_against(self, grid: Grid3) -> None:
        if self.d <= grid.R:
            raise ValueError(
                f"source depth d={self.d} must exceed R={grid.R} so the "
                "source line stays outside the closed cube"
            )

    @property
    def alphas(self) -> np.ndarray:
        return np.linspace(-self.a, self.a, self.n_src)

    @property
    def h_s(self) -> float:
        return 2.0 * self.a / (self.n_src - 1)

    def positions(self) -> np.ndarray:
        """(n_src, 3) array of source coordinates."""
        al = self.alphas
        return np.column_stack([al, np.zeros_like(al), np.full_like(al, -self.d)])

    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre abscissae and weights on [-a, a]."""
        x, w = np.polynomial.legendre.leggauss(self.Q)
        return x * self.a, w * self.a


@dataclass
class WaveField:
    """Complex scalar field per source, indexed (src, p, q, s)."""

    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.complex128)
        z = self.grid.Z_h
        if self.values.ndim != 4 or self.values.shape[1:] != (z, z, z):
            raise ValueError(f"wave field shape {self.values.shape} does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("wave field contains non-finite entries")

    @property
    def n_src(self) -> int:
        return self.values.shape[0]


@dataclass
class ScalarField:
    """Real scalar field on the grid, indexed (p, q, s)."""

    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        z = self.grid.Z_h
        if self.values.shape != (z, z, z):
            raise ValueError(f"scalar field shape {self.values.shape} does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("scalar field contains non-finite entries")

    def check_dielectric(self) -> None:
        if self.values.min() < 1.0 - 1e-12:
            raise ValueError("dielectric field must be >= 1 everywhere")


_CONFIG_FIELDS = (
    "R", "Z_h", "a", "d", "n_src", "Q",
    "k", "lam", "gamma", "r", "K0", "K1", "K2", "N",
    "delta", "eta1", "eta_halving", "eta_floor", "dj_floor", "max_iters",
    "cache_tensors", "forward_refine", "seed",
)


@dataclass(frozen=True)
class RunConfig:
    """One self-contained parameter set for a simulate/invert run.

    Defaults follow the reference experiments: R=3, k=6.6, lam=1.1,
    gamma=1e-4, N=4, K0=1, K1=2, K2=1e-3, eta1=0.1, 11 sources on
    [-1, 1] at depth d=7.5.
    """

    R: float = 3.0
    Z_h: int = 51
    a: float = 1.0
    d: float = 7.5
    n_src: int = 11
    Q: int = 32
    k: float = 6.6
    lam: float = 1.1
    gamma: float = 1e-4
    r: float | None = None  # defaults to R + 1
    K0: float = 1.0
    K1: float = 2.0
    K2: float = 1e-3
    N: int = 4
    delta: float = 0.0
    eta1: float = 0.1
    eta_halving: float = 0.5
    eta_floor: float = 1e-8
    dj_floor: float = 1e-8
    max_iters: int = 5000
    cache_tensors: str = "auto"  # on | off | auto
    forward_refine: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.r is None:
            object.__setattr__(self, "r", self.R + 1.0)
        if self.r <= self.R:
            raise ValueError(f"CWF shift r={self.r} must exceed R={self.R}")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("noise level delta must lie in [0, 1)")
        if self.N < 1:
            raise ValueError("truncation order N must be >= 1")
        if self.Q < 2 * self.N + 4:
            raise ValueError(f"Q={self.Q} too small for N={self.N}, need Q >= 2N+4")
        if self.cache_tensors not in ("on", "off", "auto"):
            raise ValueError("cache_tensors must be one of on/off/auto")
        if self.forward_refine < 1:
            raise ValueError("forward_refine must be >= 1")
        Grid3(self.R, self.Z_h)  # reuse geometric validation
        if self.d <= self.R:
            raise ValueError("source depth d must exceed R")

    def grid(self) -> Grid3:
        return Grid3(self.R, self.Z_h)

    def sources(self) -> SourceArray:
        return SourceArray(self.a, self.d, self.n_src, self.Q)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in _CONFIG_FIELDS}

    def with_overrides(self, **kwargs) -> "RunConfig":
        return replace(self, **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ValueError(f"config file {path} must contain a flat key/value mapping")
        return cls.from_dict(data)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)
