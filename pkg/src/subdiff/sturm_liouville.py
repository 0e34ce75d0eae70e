"""Dirichlet eigenpairs of -d2/dx2 + V on (0, ell) and counting diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .grid import Grid


@dataclass(frozen=True)
class PotentialField:
    """Nodal potential on a grid (boundary nodes included)."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.nx1,):
            raise ValueError(f"potential length {v.shape} != grid nx {self.grid.nx1}")
        if not np.all(np.isfinite(v)):
            raise ValueError("potential contains non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def ell(self) -> float:
        return self.grid.ell


@dataclass(frozen=True)
class SpectralData:
    """Lowest eigenpairs, unit discrete L2 norm, sign fixed by phi'(0) > 0.

    ``eigenfunctions`` holds one column per mode on the full grid (zero at
    both boundary rows); ``dphi_left`` / ``dphi_right`` carry the one-sided
    second-order boundary derivatives phi'(0), phi'(ell).
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    dphi_left: np.ndarray
    dphi_right: np.ndarray
    n0: int
    grid: Grid

    @property
    def num_modes(self) -> int:
        return self.eigenvalues.size


@dataclass(frozen=True)
class CountingReport:
    mu: float
    n_count: int
    m_count: int
    n_over_sqrt_mu: float
    m_over_sqrt_mu: float


def solve_eigen(V: PotentialField, num_modes: int) -> SpectralData:
    """Lowest ``num_modes`` Dirichlet eigenpairs by centered finite differences.

    The matrix is the symmetric tridiagonal (-1, 2, -1)/h^2 + diag(V) on the
    interior nodes; eigenfunctions are trapezoid-normalized and extended by
    their zero boundary values.
    """
    g = V.grid
    n_int = g.nx1 - 2
    if num_modes < 1:
        raise ValueError("num_modes must be >= 1")
    if num_modes > n_int // 4:
        raise ValueError(
            f"num_modes={num_modes} exceeds accuracy guard {n_int // 4} "
            f"(interior nodes / 4 at nx={g.nx1})")
    h = g.h
    d = 2.0 / h**2 + V.values[1:-1]
    e = np.full(n_int - 1, -1.0 / h**2)
    lam, vec = eigh_tridiagonal(d, e, select="i",
                                select_range=(0, num_modes - 1))
    gap_tol = 1e-10 * (1.0 + np.abs(lam[1:]))
    if np.any(np.diff(lam) <= gap_tol):
        raise RuntimeError("computed spectrum not strictly increasing")
    phi = np.zeros((g.nx1, num_modes))
    phi[1:-1, :] = vec
    norms = np.sqrt(h) * np.linalg.norm(vec, axis=0)
    phi /= norms
    # sign convention phi'(0) > 0 via the one-sided stencil
    d_left = (4.0 * phi[1, :] - phi[2, :]) / (2.0 * h)
    flip = d_left < 0
    phi[:, flip] *= -1.0
    d_left = np.abs(d_left)
    d_right = (-4.0 * phi[-2, :] + phi[-3, :]) / (2.0 * h)
    n0 = int(np.searchsorted(lam, 0.0, side="right")) + 1
    return SpectralData(eigenvalues=lam, eigenfunctions=phi,
                        dphi_left=d_left, dphi_right=d_right, n0=n0, grid=g)


def project(S: SpectralData, f: np.ndarray) -> np.ndarray:
    """Trapezoid inner products <f, phi_k> for all computed modes."""
    f = np.asarray(f, dtype=float)
    if f.shape != (S.grid.nx1,):
        raise ValueError("field length does not match the spectral grid")
    w = np.full(S.grid.nx1, S.grid.h)
    w[0] = w[-1] = 0.5 * S.grid.h
    return (w * f) @ S.eigenfunctions


def counting_report(S: SpectralData, f_tilde: np.ndarray, mu: float,
                    zero_tol: float = 1e-8) -> CountingReport:
    """Counts N(mu) and m(mu) over the computed spectrum.

    m counts modes with lambda_k <= mu whose coefficient <f~, phi_k> is zero
    at relative tolerance ``zero_tol`` (an exact-zero test is meaningless in
    floating point).
    """
    if mu > S.eigenvalues[-1]:
        raise ValueError(
            f"mu={mu} beyond the computed spectrum (max {S.eigenvalues[-1]:.6g})")
    coeffs = project(S, f_tilde)
    w = np.full(S.grid.nx1, S.grid.h)
    w[0] = w[-1] = 0.5 * S.grid.h
    f_norm = float(np.sqrt(np.sum(w * np.asarray(f_tilde) ** 2)))
    below = S.eigenvalues <= mu
    n_count = int(np.count_nonzero(below))
    m_count = int(np.count_nonzero(below & (np.abs(coeffs) <= zero_tol * f_norm)))
    s = float(np.sqrt(mu)) if mu > 0 else np.inf
    return CountingReport(mu=mu, n_count=n_count, m_count=m_count,
                          n_over_sqrt_mu=n_count / s, m_over_sqrt_mu=m_count / s)
