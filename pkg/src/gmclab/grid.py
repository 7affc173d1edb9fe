"""Uniform lattices over cubes and the field samples living on them."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Cell-centred lattice with ``n`` points per axis on ``center + [-radius, radius]^d``."""

    d: int
    n: int
    radius: float
    center: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.d < 1 or self.n < 1 or not self.radius > 0:
            raise ValueError(f"invalid grid: d={self.d}, n={self.n}, radius={self.radius}")
        if self.center is None:
            object.__setattr__(self, "center", (0.0,) * self.d)
        elif len(self.center) != self.d:
            raise ValueError("center has wrong dimension")

    @property
    def spacing(self) -> float:
        return 2.0 * self.radius / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def volume(self) -> float:
        return (2.0 * self.radius) ** self.d

    def axis(self, i: int = 0) -> np.ndarray:
        h = self.spacing
        return self.center[i] - self.radius + h * (np.arange(self.n) + 0.5)

    def points(self) -> np.ndarray:
        """All lattice points as an ``(n**d, d)`` array in C order."""
        axes = [self.axis(i) for i in range(self.d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def scaled(self, factor: float) -> "GridSpec":
        return GridSpec(self.d, self.n, self.radius * factor, self.center)


def pairwise_distances(points: np.ndarray, other: np.ndarray | None = None) -> np.ndarray:
    other = points if other is None else other
    diff = points[:, None, :] - other[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


@dataclass
class FieldSample:
    grid: GridSpec
    values: np.ndarray
    level: float
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape[-1] != self.grid.size:
            raise ValueError("values do not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field sample contains non-finite values")
