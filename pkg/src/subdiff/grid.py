"""Uniform space/time meshes shared by all solvers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform tensor mesh on (0, ell) x (0, T).

    ``nx`` is the total spatial node count including both boundary nodes,
    or an ``(nx1, nx2)`` pair for the 2D cylinder (0, ell) x (0, 1).
    ``nt`` counts time nodes including t=0.
    """

    nx: int | tuple[int, int]
    nt: int
    ell: float = 1.0
    T: float = 0.1

    def __post_init__(self):
        for n in self.nx_tuple:
            if n < 16:
                raise ValueError(f"spatial node count {n} < 16")
        if self.nt < 16:
            raise ValueError(f"temporal node count {self.nt} < 16")
        if self.ell <= 0 or self.T <= 0:
            raise ValueError("domain length and horizon must be positive")

    @property
    def is_2d(self) -> bool:
        return isinstance(self.nx, tuple)

    @property
    def nx_tuple(self) -> tuple[int, ...]:
        return self.nx if isinstance(self.nx, tuple) else (self.nx,)

    @property
    def nx1(self) -> int:
        return self.nx_tuple[0]

    @property
    def h(self) -> float:
        """Spatial spacing along x1."""
        return self.ell / (self.nx1 - 1)

    @property
    def h2(self) -> float:
        """Spatial spacing along the transverse direction (2D only)."""
        if not self.is_2d:
            raise ValueError("h2 requires a 2D grid")
        return 1.0 / (self.nx_tuple[1] - 1)

    @property
    def tau(self) -> float:
        return self.T / (self.nt - 1)

    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.ell, self.nx1)

    def x2(self) -> np.ndarray:
        if not self.is_2d:
            raise ValueError("x2 requires a 2D grid")
        return np.linspace(0.0, 1.0, self.nx_tuple[1])

    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt)


def same_grid(a: Grid, b: Grid) -> None:
    """Raise if two fields that must share a mesh do not."""
    if a != b:
        raise ValueError(f"grid mismatch: {a} vs {b}")
