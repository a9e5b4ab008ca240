"""Target geometry descriptions for synthetic data generation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .grid import Grid3, ScalarField


@dataclass(frozen=True)
class TargetSpec:
    """One inclusion: ball, ellipsoid or axis-aligned prism with a
    constant dielectric value on a unit background."""

    shape: str
    center: tuple[float, float, float]
    size: tuple[float, float, float]  # semi-axes, or full edges for a prism
    contrast: float  # dielectric value c inside, >= 1

    def __post_init__(self):
        if self.shape not in ("ball", "ellipsoid", "prism", "none"):
            raise ValueError(f"unknown target shape {self.shape!r}")
        if self.contrast < 1.0:
            raise ValueError("target dielectric value must be >= 1")
        if self.shape != "none" and min(self.size) <= 0:
            raise ValueError("target size must be positive")

    def dielectric(self, X: np.ndarray, Y: np.ndarray, Z: np.ndarray) -> np.ndarray:
        cx, cy, cz = self.center
        ax, ay, az = self.size
        if self.shape == "none":
            inside = np.zeros_like(X, dtype=bool)
        elif self.shape in ("ball", "ellipsoid"):
            inside = ((X - cx) / ax) ** 2 + ((Y - cy) / ay) ** 2 + ((Z - cz) / az) ** 2 <= 1.0
        else:  # prism: size holds full edge lengths
            inside = (
                (np.abs(X - cx) <= ax / 2)
                & (np.abs(Y - cy) <= ay / 2)
                & (np.abs(Z - cz) <= az / 2)
            )
        return np.where(inside, self.contrast, 1.0)

    def field(self, grid: Grid3) -> ScalarField:
        X, Y, Z = grid.meshgrid()
        return ScalarField(grid, self.dielectric(X, Y, Z))

    @classmethod
    def from_dict(cls, data: dict) -> "TargetSpec":
        shape = data.get("shape", "none")
        center = tuple(float(v) for v in data.get("center", (0.0, 0.0, 0.0)))
        if "radius" in data:
            rr = float(data["radius"])
            size = (rr, rr, rr)
        else:
            size = tuple(float(v) for v in data.get("size", (1.0, 1.0, 1.0)))
        if len(center) != 3 or len(size) != 3:
            raise ValueError("center and size must have three components")
        return cls(shape, center, size, float(data.get("contrast", 1.0)))

    @classmethod
    def load(cls, path: str | Path) -> "TargetSpec":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ValueError(f"geometry file {path} must be a mapping")
        return cls.from_dict(data)


def reference_ball() -> TargetSpec:
    """Reference ball target: radius 0.3, center (0, 0, -2.5), c = 2."""
    return TargetSpec("ball", (0.0, 0.0, -2.5), (0.3, 0.3, 0.3), 2.0)
