"""Liouville gauge transform between the convection form and the
self-adjoint Schrodinger form, plus the identifiability machinery.

The transform multiplies fields by exp(-(1/2) int_anchor^x b); under it the
convection-diffusion operator -d2 + b d + q becomes -d2 + V with
V = -b'/2 + b^2/4 + q, and the source f maps to f~ = exp_factor * f.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid, same_grid
from .sturm_liouville import PotentialField


def _derivative(values: np.ndarray, h: float) -> np.ndarray:
    """Second-order first derivative, one-sided at the ends."""
    d = np.empty_like(values)
    d[1:-1] = (values[2:] - values[:-2]) / (2.0 * h)
    d[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h)
    d[-1] = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * h)
    return d


def _cumtrapz0(values: np.ndarray, h: float) -> np.ndarray:
    """Cumulative trapezoid from the left end, zero at node 0."""
    out = np.zeros_like(values)
    out[1:] = np.cumsum(0.5 * h * (values[1:] + values[:-1]))
    return out


@dataclass(frozen=True)
class CoefficientSet:
    """Convection field b (C1) and potential q on a shared grid."""

    b: np.ndarray
    q: np.ndarray
    grid: Grid

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if b.shape != (self.grid.nx1,) or q.shape != (self.grid.nx1,):
            raise ValueError("coefficient length does not match the grid")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(q))):
            raise ValueError("coefficients contain non-finite entries")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "q", q)

    def b_prime(self) -> np.ndarray:
        return _derivative(self.b, self.grid.h)


@dataclass(frozen=True)
class GaugeData:
    potential: PotentialField
    exp_factor: np.ndarray      # exp(-(1/2) int_anchor^x b), positive
    f_tilde: np.ndarray
    anchor: float


def to_gauge(c: CoefficientSet, f: np.ndarray, anchor: float | None = None) -> GaugeData:
    """Gauge data (V, exp_factor, f~) for a source f; anchor defaults to ell."""
    f = np.asarray(f, dtype=float)
    if f.shape != (c.grid.nx1,):
        raise ValueError("source length does not match the grid")
    g = c.grid
    if anchor is None:
        anchor = g.ell
    x = g.x()
    if not (0.0 <= anchor <= g.ell):
        raise ValueError(f"anchor {anchor} outside [0, ell]")
    prim = _cumtrapz0(c.b, g.h)                      # int_0^x b
    anchor_val = float(np.interp(anchor, x, prim))   # int_0^anchor b
    exp_factor = np.exp(-0.5 * (prim - anchor_val))
    V = -0.5 * c.b_prime() + 0.25 * c.b**2 + c.q
    return GaugeData(potential=PotentialField(V, g), exp_factor=exp_factor,
                     f_tilde=exp_factor * f, anchor=anchor)


def gauge_ode_family(b1: np.ndarray, b2: np.ndarray, q_diff: np.ndarray,
                     b0: float, grid: Grid) -> np.ndarray:
    """Difference field b with equal gauge data:

        b(x) = b0 exp((1/2) int_0^x (b1+b2))
               + 2 int_0^x exp((1/2) int_tau^x (b1+b2)) q_diff(tau) dtau

    i.e. the one-parameter family of coefficient pairs the boundary data
    cannot distinguish.  Nested cumulative trapezoid, O(N^2) by forming the
    full (x, tau) weight triangle.
    """
    b1 = np.asarray(b1, dtype=float)
    b2 = np.asarray(b2, dtype=float)
    q_diff = np.asarray(q_diff, dtype=float)
    n = grid.nx1
    if not (b1.shape == b2.shape == q_diff.shape == (n,)):
        raise ValueError("gauge family inputs must share the grid")
    h = grid.h
    prim = _cumtrapz0(0.5 * (b1 + b2), h)           # (1/2) int_0^x (b1+b2)
    expo = np.exp(prim[:, None] - prim[None, :])    # exp over [tau, x]
    integrand = expo * q_diff[None, :]
    inner = np.zeros(n)
    for i in range(1, n):
        row = integrand[i, : i + 1]
        inner[i] = 0.5 * h * np.sum(row[1:] + row[:-1])
    return b0 * np.exp(prim) + 2.0 * inner


@dataclass(frozen=True)
class EquivalenceReport:
    beta: float
    degenerate: bool
    v_mismatch: float
    f_mismatch: float
    sigma_mismatch: float
    equivalent: bool


def check_gauge_equivalence(c1: CoefficientSet, f1: np.ndarray, sigma1: np.ndarray,
                            c2: CoefficientSet, f2: np.ndarray, sigma2: np.ndarray,
                            tol: float = 1e-8) -> EquivalenceReport:
    """Decide whether two parameter sets agree up to the scalar-split and
    gauge obstructions: sigma2 = beta sigma1, f~1 = beta f~2, V1 = V2.

    beta is the least-squares scalar fitted on the sigma pair; |beta| below
    1e-12 (or a vanishing sigma1) is flagged degenerate.
    """
    same_grid(c1.grid, c2.grid)
    g1 = to_gauge(c1, np.asarray(f1, dtype=float))
    g2 = to_gauge(c2, np.asarray(f2, dtype=float))
    sigma1 = np.asarray(sigma1, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    if sigma1.shape != sigma2.shape:
        raise ValueError("sigma vectors must share a time grid")
    s11 = float(sigma1 @ sigma1)
    if s11 == 0.0:
        return EquivalenceReport(beta=np.nan, degenerate=True,
                                 v_mismatch=np.inf, f_mismatch=np.inf,
                                 sigma_mismatch=np.inf, equivalent=False)
    beta = float(sigma2 @ sigma1) / s11
    degenerate = abs(beta) < 1e-12
    sig_scale = max(float(np.max(np.abs(sigma2))), 1e-300)
    sigma_mismatch = float(np.max(np.abs(sigma2 - beta * sigma1))) / sig_scale
    f_scale = max(float(np.max(np.abs(g1.f_tilde))), 1e-300)
    f_mismatch = float(np.max(np.abs(g1.f_tilde - beta * g2.f_tilde))) / f_scale
    v1, v2 = g1.potential.values, g2.potential.values
    v_scale = max(float(np.max(np.abs(v1))), 1.0)
    v_mismatch = float(np.max(np.abs(v1 - v2))) / v_scale
    equivalent = (not degenerate and v_mismatch <= tol
                  and f_mismatch <= tol and sigma_mismatch <= tol)
    return EquivalenceReport(beta=beta, degenerate=degenerate,
                             v_mismatch=v_mismatch, f_mismatch=f_mismatch,
                             sigma_mismatch=sigma_mismatch, equivalent=equivalent)
