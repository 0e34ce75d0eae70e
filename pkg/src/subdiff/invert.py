"""Regularized Levenberg-Marquardt reconstruction from one passive record.

The parameter vector is a concatenation of blocks (subsets of b, q, f,
sigma).  Each step solves the damped normal equations

    (J^T J + sum_blocks (gamma_block/2) R_block) delta = J^T (g - F(p))

with R_block the discrete H1 Gram matrix on the block's support and the
weights gamma decaying geometrically between iterations.

Two Jacobian engines are available:

* ``fd``: forward-difference columns of the actual discrete forward map,
  one solve per column (the reference implementation; embarrassingly
  parallel).
* ``spectral``: Gauss-Newton surrogate assembled from the eigenfunction
  representation of the current iterate - exact linear responses for the
  f and sigma blocks and tangent (linearized) responses for b and q.  It
  matches the fd columns to discretization error at a small fixed cost per
  iteration, which is what makes the full-resolution experiments fit their
  runtime budget on desktop hardware.
"""

from __future__ import annotations

import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import fftconvolve

from .forward import (
    NumericError,
    ProblemSpec,
    Solution,
    kernel_antiderivatives,
    mode_time_factors,
    project_transverse,
    solve_fd,
    solve_fd_2d,
    transverse_basis,
)
from .gauge import CoefficientSet, to_gauge
from .grid import Grid
from .observe import ObservationRecord, extract
from .sturm_liouville import project, solve_eigen

BLOCK_NAMES = ("b", "q", "f", "sigma")


@dataclass(frozen=True)
class ParamBlock:
    """One optimized block: nodal values (or slope factors for b) on a
    support given by indices into the owning field's grid.

    ``basis`` optionally expands a coarse coefficient vector to the nodal
    support (piecewise-linear subspaces etc.); identity when omitted.  A
    coarse basis is how the shipped cases tame the fine-scale null space of
    the jointly unknown coefficient/source pairs."""

    name: str
    indices: np.ndarray
    representation: str = "nodal"
    center: float = 0.0          # expansion point x_c for slope_factor
    basis: np.ndarray | None = None

    def __post_init__(self):
        if self.name not in BLOCK_NAMES:
            raise ValueError(f"unknown block {self.name!r}")
        if self.representation not in ("nodal", "slope_factor"):
            raise ValueError(f"unknown representation {self.representation!r}")
        if self.representation == "slope_factor" and self.name != "b":
            raise ValueError("slope_factor applies only to b")
        object.__setattr__(self, "indices",
                           np.asarray(self.indices, dtype=int))
        if self.basis is not None:
            basis = np.asarray(self.basis, dtype=float)
            if basis.shape[0] != self.indices.size:
                raise ValueError("basis rows must match the support size")
            object.__setattr__(self, "basis", basis)

    @property
    def size(self) -> int:
        return self.indices.size if self.basis is None else self.basis.shape[1]

    def expand(self, seg: np.ndarray) -> np.ndarray:
        """Coefficients -> nodal values on the support."""
        return seg if self.basis is None else self.basis @ seg

    def reduce(self, nodal: np.ndarray) -> np.ndarray:
        """Nodal support values -> best coefficients (least squares)."""
        if self.basis is None:
            return nodal
        coef, *_ = np.linalg.lstsq(self.basis, nodal, rcond=None)
        return coef


@dataclass(frozen=True)
class ParamLayout:
    """Frozen fields plus the ordered unknown blocks living on them."""

    grid: Grid
    alpha: float
    delta: float
    obs_kind: str
    blocks: tuple[ParamBlock, ...]
    frozen_b: np.ndarray
    frozen_q: np.ndarray
    frozen_f: np.ndarray
    frozen_sigma: np.ndarray
    num_transverse: int = 12     # 2D forward expansion order

    @property
    def coeff_grid(self) -> Grid:
        g = self.grid
        if not g.is_2d:
            return g
        return Grid(nx=g.nx1, nt=g.nt, ell=g.ell, T=g.T)

    @property
    def num_params(self) -> int:
        return sum(b.size for b in self.blocks)

    def split(self, params: np.ndarray) -> dict[str, np.ndarray]:
        params = np.asarray(params, dtype=float)
        if params.shape != (self.num_params,):
            raise ValueError(
                f"parameter vector length {params.size} != {self.num_params}")
        out, at = {}, 0
        for blk in self.blocks:
            out[blk.name] = params[at:at + blk.size]
            at += blk.size
        return out

    def block_slices(self) -> dict[str, slice]:
        out, at = {}, 0
        for blk in self.blocks:
            out[blk.name] = slice(at, at + blk.size)
            at += blk.size
        return out

    def assemble(self, params: np.ndarray) -> ProblemSpec:
        segs = self.split(params)
        b = self.frozen_b.copy()
        q = self.frozen_q.copy()
        f = self.frozen_f.copy()
        sigma = self.frozen_sigma.copy()
        x = self.coeff_grid.x()
        for blk in self.blocks:
            seg = blk.expand(segs[blk.name])
            if blk.name == "b":
                if blk.representation == "slope_factor":
                    b[blk.indices] = (self.frozen_b[blk.indices]
                                      + seg * (x[blk.indices] - blk.center))
                else:
                    b[blk.indices] = seg
            elif blk.name == "q":
                q[blk.indices] = seg
            elif blk.name == "sigma":
                sigma[blk.indices] = seg
            else:
                f.reshape(-1)[blk.indices] = seg
        return ProblemSpec(grid=self.grid, alpha=self.alpha,
                           coeffs=CoefficientSet(b, q, self.coeff_grid),
                           f=f, sigma=sigma, delta=self.delta)

    def truth_vector(self, fields: dict[str, np.ndarray]) -> np.ndarray:
        """Project full truth fields onto the parameter vector."""
        parts = []
        x = self.coeff_grid.x()
        for blk in self.blocks:
            full = np.asarray(fields[blk.name], dtype=float).reshape(-1)
            if blk.name == "b" and blk.representation == "slope_factor":
                dx = x[blk.indices] - blk.center
                if np.any(dx == 0):
                    raise ValueError("slope_factor support touches its center")
                nodal = (full[blk.indices] - self.frozen_b[blk.indices]) / dx
            else:
                nodal = full[blk.indices]
            parts.append(blk.reduce(nodal))
        return np.concatenate(parts)


def solve_forward(layout: ParamLayout, params: np.ndarray) -> Solution:
    spec = layout.assemble(params)
    if layout.grid.is_2d:
        return solve_fd_2d(spec, mode="B", num_transverse=layout.num_transverse,
                           tail_rtol=np.inf)
    return solve_fd(spec)


def forward_map(layout: ParamLayout, params: np.ndarray,
                sol: Solution | None = None) -> ObservationRecord:
    """Assemble the problem instance, run the discrete forward model, extract the
    configured observation."""
    if sol is None:
        sol = solve_forward(layout, params)
    return extract(sol, layout.obs_kind)


_FD_STATE: dict = {}


def _fd_worker(args):
    lo, hi = args
    layout = _FD_STATE["layout"]
    params = _FD_STATE["params"]
    base = _FD_STATE["base"]
    step = _FD_STATE["step"]
    cols = []
    for j in range(lo, hi):
        h_j = step * (1.0 + abs(params[j]))
        bumped = params.copy()
        bumped[j] += h_j
        try:
            col = (forward_map(layout, bumped).vector - base) / h_j
        except NumericError as exc:
            raise NumericError(f"jacobian column {j} failed: {exc}") from exc
        if not np.all(np.isfinite(col)):
            raise NumericError(f"non-finite jacobian column {j}")
        cols.append(col)
    return lo, np.column_stack(cols) if cols else None


def jacobian(layout: ParamLayout, params: np.ndarray,
             jacobian_step: float = 1e-6,
             base_record: ObservationRecord | None = None,
             workers: int | None = None) -> np.ndarray:
    """Forward-difference Jacobian, column j = [F(p + h e_j) - F(p)]/h with
    h = jacobian_step * (1 + |p_j|); columns evaluated independently."""
    params = np.asarray(params, dtype=float)
    base = (base_record or forward_map(layout, params)).vector
    n = layout.num_params
    if workers is None:
        workers = _worker_count()
    _FD_STATE.update(layout=layout, params=params, base=base,
                     step=jacobian_step)
    chunk = max(4, n // max(4 * workers, 1))
    tasks = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
    out = np.empty((base.size, n))
    if workers <= 1 or n < 16:
        results = map(_fd_worker, tasks)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fd_worker, tasks))
    for lo, block in results:
        if block is not None:
            out[:, lo:lo + block.shape[1]] = block
    return out


def _worker_count() -> int:
    env = os.environ.get("SUBDIFF_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def _trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def h1_gram(n: int, h: float) -> np.ndarray:
    """Mass + stiffness (natural ends) on a uniform n-node segment."""
    if n == 1:
        return np.array([[h]])
    R = np.zeros((n, n))
    np.fill_diagonal(R, 2.0 / h)
    R[0, 0] = R[-1, -1] = 1.0 / h
    idx = np.arange(n - 1)
    R[idx, idx + 1] = R[idx + 1, idx] = -1.0 / h
    R += np.diag(_trapezoid_weights(n, h))
    return R


def h1_gram_2d(n1: int, h1: float, n2: int, h2: float) -> np.ndarray:
    """Tensor H1 Gram: M1xM2 + S1xM2 + M1xS2."""
    def mass(n, h):
        return np.diag(_trapezoid_weights(n, h))

    def stiff(n, h):
        S = np.zeros((n, n))
        if n == 1:
            return S
        np.fill_diagonal(S, 2.0 / h)
        S[0, 0] = S[-1, -1] = 1.0 / h
        idx = np.arange(n - 1)
        S[idx, idx + 1] = S[idx + 1, idx] = -1.0 / h
        return S

    m1, m2 = mass(n1, h1), mass(n2, h2)
    s1, s2 = stiff(n1, h1), stiff(n2, h2)
    return np.kron(m1, m2) + np.kron(s1, m2) + np.kron(m1, s2)


def hat_basis(coords: np.ndarray, n_dofs: int) -> np.ndarray:
    """Piecewise-linear interpolation basis from n_dofs equispaced coarse
    nodes spanning ``coords`` (sampled at those support coordinates)."""
    coords = np.asarray(coords, dtype=float)
    knots = np.linspace(coords[0], coords[-1], n_dofs)
    B = np.zeros((coords.size, n_dofs))
    for j in range(n_dofs):
        e = np.zeros(n_dofs)
        e[j] = 1.0
        B[:, j] = np.interp(coords, knots, e)
    return B


def block_gram(layout: ParamLayout, blk: ParamBlock) -> np.ndarray:
    """Discrete H1 Gram on the block's nodal support, compressed through the
    block's basis when one is set."""
    g = layout.grid
    n_nodal = blk.indices.size
    if blk.name == "sigma":
        R = h1_gram(n_nodal, g.tau)
    elif blk.name == "f" and g.is_2d:
        nx2 = g.nx_tuple[1]
        rows = np.unique(blk.indices // nx2)
        cols = np.unique(blk.indices % nx2)
        if n_nodal != rows.size * cols.size:
            raise ValueError("2D f support must be a full index rectangle")
        R = h1_gram_2d(rows.size, g.h, cols.size, g.h2)
    else:
        R = h1_gram(n_nodal, layout.coeff_grid.h)
    if blk.basis is not None:
        R = blk.basis.T @ R @ blk.basis
    return R


@dataclass
class InversionConfig:
    """Solver knobs.

    ``gamma_mode`` picks how the initial weights are sized when a block
    first becomes active: ``gradient`` follows gamma = gamma_scale *
    |J_block^T r|_inf, ``normal`` ties the weight to the block's normal
    matrix, gamma = multiplier * mean diag(J^T J) / mean diag(R), which is
    resolution-robust and what the shipped case configs use.  Per-block
    multipliers come from ``gamma0`` (falling back to gamma_scale)."""

    gamma0: dict[str, float] | None = None
    gamma_scale: float = 1e-2
    gamma_mode: str = "normal"
    rho: float = 0.7
    rho_blocks: dict[str, float] | None = None
    max_iters: int = 30
    jacobian_step: float = 1e-6
    residual_tol: float = 1e-10
    step_tol: float = 1e-9
    rise_limit: float = 0.5
    coeff_gate: float = 0.05
    jacobian_mode: str = "spectral"
    num_modes: int = 48
    workers: int | None = None

    def __post_init__(self):
        if not (0.0 < self.rho < 1.0):
            raise ValueError("decay rho must sit in (0, 1)")
        if self.residual_tol <= 0 or self.step_tol <= 0:
            raise ValueError("stop tolerances must be positive")
        if self.gamma0 is not None and any(v <= 0 for v in self.gamma0.values()):
            raise ValueError("gamma0 multipliers must be positive")
        if self.jacobian_mode not in ("fd", "spectral"):
            raise ValueError(f"unknown jacobian mode {self.jacobian_mode!r}")
        if self.gamma_mode not in ("gradient", "normal"):
            raise ValueError(f"unknown gamma mode {self.gamma_mode!r}")


@dataclass
class InversionState:
    k: int
    params: np.ndarray
    residual: float
    history: list = field(default_factory=list)
    converged: bool = False
    stop_reason: str = "running"
    last_step_norm: float = np.inf


def spectral_jacobian(layout: ParamLayout, params: np.ndarray,
                      sol: Solution, num_modes: int = 48) -> np.ndarray:
    """Gauss-Newton sensitivity matrix from the eigen-representation of the
    current iterate; see the module docstring."""
    if layout.grid.is_2d:
        return _spectral_jacobian_2d(layout, params, sol, num_modes)
    return _spectral_jacobian_1d(layout, params, sol, num_modes)


def l1_mode_impulses(alpha: float, lams: np.ndarray, nt: int,
                     tau: float) -> np.ndarray:
    """Discrete impulse responses of the L1 scheme's scalar mode dynamics.

    S[i, k] solves (c0 + lam_k) y^n = c0 sum_j d_j y^(n-j) + delta_{n,1}
    shifted to lag index i = n - 1; the sensitivity assembly convolves
    these against tangent sources so its time discretization matches
    ``solve_fd`` exactly (the spatial eigenbasis is the only surrogate)."""
    from .forward import l1_weights
    from scipy.special import rgamma as _rg

    c0 = tau ** (-alpha) * _rg(2.0 - alpha)
    w = l1_weights(alpha, nt)
    d_rev = np.ascontiguousarray((w[:-1] - w[1:])[::-1])
    S = np.zeros((nt, lams.size))
    denom = c0 + lams
    S[0] = 1.0 / denom
    for i in range(1, nt):
        S[i] = (c0 / denom) * (d_rev[-i:] @ S[:i])
    return S


def _sigma_shift_columns(R: np.ndarray, indices: np.ndarray,
                         nt: int) -> np.ndarray:
    """Columns of the sigma sensitivity: the discrete forward map is LTI in
    the source strength, so column m is the combined mode impulse response
    shifted to start at step m (and sigma at t_0 never enters)."""
    cols = np.zeros((nt, indices.size))
    for c, m in enumerate(indices):
        if m >= 1:
            cols[m:, c] = R[: nt - m]
    return cols


def _spectral_jacobian_1d(layout: ParamLayout, params: np.ndarray,
                          sol: Solution, num_modes: int) -> np.ndarray:
    spec = layout.assemble(params)
    g = layout.grid
    nt, nx, tau, h = g.nt, g.nx1, g.tau, g.h
    gd = to_gauge(spec.coeffs, spec.f)
    S = solve_eigen(gd.potential, num_modes)
    lam = S.eigenvalues
    x = g.x()
    obs = slice(1, nt)                        # records live on (0, T]
    if layout.obs_kind == "boundary_flux_right":
        dphi = S.dphi_right
        out_scale = np.ones(nt)
    elif layout.obs_kind == "boundary_flux_left":
        dphi = S.dphi_left
        out_scale = np.full(nt, 1.0 / gd.exp_factor[0])
    else:
        raise ValueError(f"spectral jacobian lacks kind {layout.obs_kind!r}")
    S_modes = l1_mode_impulses(layout.alpha, lam, nt, tau)
    du = np.gradient(sol.u, h, axis=1, edge_order=2)
    n_obs = nt - 1
    J = np.empty((n_obs, layout.num_params))
    slices = layout.block_slices()
    nfft = 1
    while nfft < 2 * nt:
        nfft *= 2
    S_hat = np.fft.rfft(S_modes, n=nfft, axis=0)        # (nf, K)
    sigma_pad = spec.sigma.copy()
    sigma_pad[0] = 0.0          # the stepping never reads sigma(t_0)
    for blk in layout.blocks:
        sl = slices[blk.name]
        idx = blk.indices
        if blk.name == "f":
            sig_hat = np.fft.rfft(sigma_pad, n=nfft)
            factors = np.fft.irfft(S_hat * sig_hat[:, None], n=nfft,
                                   axis=0)[:nt]
            sens = (factors * dphi[None, :]) @ S.eigenfunctions[idx, :].T
            w = _trapezoid_weights(nx, h)[idx] * gd.exp_factor[idx]
            cols = (sens[obs] * w[None, :]) * out_scale[obs, None]
        elif blk.name == "sigma":
            coeffs = project(S, gd.f_tilde)
            R = S_modes @ (coeffs * dphi)
            cols = _sigma_shift_columns(R, idx, nt)[obs] * out_scale[obs, None]
        else:   # b or q tangent blocks
            src = -du[:, idx] if blk.name == "b" else -sol.u[:, idx]
            if blk.name == "b" and blk.representation == "slope_factor":
                src = src * (x[idx] - blk.center)[None, :]
            modal = S.eigenfunctions[idx, :] * ((_trapezoid_weights(nx, h)[idx]
                                                 * gd.exp_factor[idx])[:, None])
            W = S_hat @ (modal * dphi[None, :]).T   # (nf, n_idx)
            src_hat = np.fft.rfft(src, n=nfft, axis=0)
            cols = np.fft.irfft(src_hat * W, n=nfft, axis=0)[:nt]
            cols = cols[obs] * out_scale[obs, None]
        if blk.name in ("b", "q", "f"):
            # boundary nodes never enter the interior operator rows: their
            # discrete sensitivity is exactly zero (the H1 penalty pins them)
            cols[:, (idx == 0) | (idx == nx - 1)] = 0.0
        J[:, sl] = cols if blk.basis is None else cols @ blk.basis
    return J


def _spectral_jacobian_2d(layout: ParamLayout, params: np.ndarray,
                          sol: Solution, num_modes: int) -> np.ndarray:
    spec = layout.assemble(params)
    g = layout.grid
    nx1, nx2 = g.nx_tuple
    nt, tau, h1, h2 = g.nt, g.tau, g.h, g.h2
    if layout.obs_kind != "boundary_flux_2d":
        raise ValueError("2D layouts observe the boundary flux slice")
    cgrid = layout.coeff_grid
    coeffs1d = CoefficientSet(spec.coeffs.b, spec.coeffs.q, cgrid)
    gd = to_gauge(coeffs1d, np.zeros(nx1))
    S = solve_eigen(gd.potential, num_modes)
    lam, dphi = S.eigenvalues, S.dphi_right
    x = cgrid.x()
    _, psi, mu = transverse_basis(layout.num_transverse, nx2)
    fm = project_transverse(spec.f, psi, h2)            # (nx1, M)
    w1 = _trapezoid_weights(nx1, h1)
    w2 = _trapezoid_weights(nx2, h2)
    obs = slice(1, nt)
    n_obs = (nt - 1) * nx2
    J = np.empty((n_obs, layout.num_params))
    slices = layout.block_slices()
    M = layout.num_transverse
    S_all = [l1_mode_impulses(layout.alpha, lam + mu[m], nt, tau)
             for m in range(M)]
    # modal 1D solutions for the tangent sources (b, q blocks)
    base1d = ProblemSpec(grid=cgrid, alpha=layout.alpha, coeffs=coeffs1d,
                         f=np.zeros(nx1), sigma=spec.sigma, delta=spec.delta)
    u_modes = [solve_fd(base1d, extra_q=float(mu[m]), f_override=fm[:, m]).u
               for m in range(M)]
    nfft = 1
    while nfft < 2 * nt:
        nfft *= 2
    sigma_pad = spec.sigma.copy()
    sigma_pad[0] = 0.0
    sig_hat = np.fft.rfft(sigma_pad, n=nfft)
    for blk in layout.blocks:
        sl = slices[blk.name]
        idx = blk.indices
        if blk.name == "f":
            rows = idx // nx2
            cols2 = idx % nx2
            urows = np.unique(rows)
            ucols = np.unique(cols2)
            block = np.zeros((nt - 1, nx2, urows.size, ucols.size))
            wx = w1[urows] * gd.exp_factor[urows]
            for m in range(M):
                S_hat = np.fft.rfft(S_all[m], n=nfft, axis=0)
                factors = np.fft.irfft(S_hat * sig_hat[:, None], n=nfft,
                                       axis=0)[:nt]
                A = (factors * dphi[None, :]) @ S.eigenfunctions[urows, :].T
                yy = np.outer(psi[:, m], (w2 * psi[:, m])[ucols])
                block += A[obs][:, None, :, None] * yy[None, :, None, :] \
                    * wx[None, None, :, None]
            block[:, :, urows == 0, :] = 0.0
            block[:, :, urows == nx1 - 1, :] = 0.0
            block[:, :, :, ucols == 0] = 0.0
            block[:, :, :, ucols == nx2 - 1] = 0.0
            cols = block.reshape(n_obs, idx.size)
            J[:, sl] = cols if blk.basis is None else cols @ blk.basis
        elif blk.name == "sigma":
            cols = np.zeros((nt, nx2, idx.size))
            for m in range(M):
                cm = project(S, gd.exp_factor * fm[:, m])
                R = S_all[m] @ (cm * dphi)
                base_cols = _sigma_shift_columns(R, idx, nt)
                cols += base_cols[:, None, :] * psi[:, m][None, :, None]
            J[:, sl] = cols[obs].reshape(n_obs, idx.size)
        else:
            cols = np.zeros((nt, nx2, idx.size))
            modal = S.eigenfunctions[idx, :] * ((w1[idx]
                                                 * gd.exp_factor[idx])[:, None])
            for m in range(M):
                um = u_modes[m]
                du = np.gradient(um, h1, axis=1, edge_order=2)
                src = -du[:, idx] if blk.name == "b" else -um[:, idx]
                if blk.name == "b" and blk.representation == "slope_factor":
                    src = src * (x[idx] - blk.center)[None, :]
                S_hat = np.fft.rfft(S_all[m], n=nfft, axis=0)
                W = S_hat @ (modal * dphi[None, :]).T
                src_hat = np.fft.rfft(src, n=nfft, axis=0)
                base_cols = np.fft.irfft(src_hat * W, n=nfft, axis=0)[:nt]
                cols += base_cols[:, None, :] * psi[:, m][None, :, None]
            cols[:, :, (idx == 0) | (idx == nx1 - 1)] = 0.0
            flat = cols[obs].reshape(n_obs, idx.size)
            J[:, sl] = flat if blk.basis is None else flat @ blk.basis
    return J


def lm_step(state: InversionState, jac: np.ndarray, data: ObservationRecord,
            layout: ParamLayout, config: InversionConfig,
            gammas: dict[str, float], residual_vec: np.ndarray,
            grams: dict[str, np.ndarray],
            active_mask: np.ndarray | None = None) -> tuple[InversionState, dict[str, float]]:
    """One damped Gauss-Newton update; decays the gammas afterwards.

    Blocks outside ``active_mask`` (zero sensitivity at this iterate) keep a
    zero increment.  A step that leaves the admissible set (non-finite
    fields, Peclet bound) is shrunk until the iterate assembles again; this
    is a hard-constraint backstop, not a line search."""
    normal = jac.T @ jac
    rhs = jac.T @ residual_vec
    slices = layout.block_slices()
    for blk in layout.blocks:
        if blk.name not in gammas:
            continue
        sl = slices[blk.name]
        normal[sl, sl] += 0.5 * gammas[blk.name] * grams[blk.name]
    if active_mask is None:
        active_mask = np.ones(layout.num_params, dtype=bool)
    delta = np.zeros(layout.num_params)
    idx = np.nonzero(active_mask)[0]
    try:
        delta[idx] = np.linalg.solve(normal[np.ix_(idx, idx)], rhs[idx])
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(normal[np.ix_(idx, idx)])
        raise NumericError(
            f"normal equations failed at iteration {state.k} "
            f"(cond ~ {cond:.3e})") from exc
    for _ in range(12):
        try:
            layout.assemble(state.params + delta)
            break
        except ValueError:
            delta = 0.25 * delta
    else:
        raise NumericError(f"no admissible step at iteration {state.k}")
    new_params = state.params + delta
    rho_of = config.rho_blocks or {}
    new_gammas = {k: rho_of.get(k, config.rho) * v for k, v in gammas.items()}
    new_state = InversionState(k=state.k + 1, params=new_params,
                               residual=state.residual,
                               history=state.history,
                               converged=state.converged,
                               stop_reason=state.stop_reason)
    new_state.last_step_norm = float(np.linalg.norm(delta))
    return new_state, new_gammas


def _fix_scalar_split(layout: ParamLayout, params: np.ndarray) -> None:
    """When both f and sigma are unknown the forward map only sees their
    product; rescale in place so max|sigma| = 1, keeping the iterate scales
    bounded (the split scalar is restored by the scoring convention)."""
    names = [blk.name for blk in layout.blocks]
    if "f" not in names or "sigma" not in names:
        return
    slices = layout.block_slices()
    s_seg = params[slices["sigma"]]
    top = float(np.max(np.abs(s_seg)))
    if top < 1e-12:
        return
    params[slices["sigma"]] = s_seg / top
    params[slices["f"]] *= top


def run_inversion(layout: ParamLayout, data: ObservationRecord,
                  config: InversionConfig,
                  initial_params: np.ndarray | None = None,
                  truth: dict[str, np.ndarray] | None = None) -> InversionState:
    """Iterate jacobian + lm_step until a stopping rule fires.

    ``truth``, when supplied, adds per-block relative errors to the history
    (full-field comparison via the layout's assembly).
    """
    g_vec = data.vector
    params = (np.zeros(layout.num_params) if initial_params is None
              else np.asarray(initial_params, dtype=float).copy())
    state = InversionState(k=0, params=params, residual=np.inf)
    grams = {blk.name: block_gram(layout, blk) for blk in layout.blocks}
    gammas: dict[str, float] | None = None
    calibrated: set[str] = set()
    decays: dict[str, float] = {}
    rising = 0
    spiked = 0
    best_res, best_params = np.inf, state.params.copy()
    t0 = time.time()
    slices = layout.block_slices()
    for it in range(config.max_iters):
        sol = solve_forward(layout, state.params)
        f_vec = extract(sol, layout.obs_kind).vector
        residual_vec = g_vec - f_vec
        res = float(np.linalg.norm(residual_vec))
        prev = state.residual
        state.residual = res
        if res < best_res:
            best_res, best_params = res, state.params.copy()
        entry = {"iter": it, "residual": res,
                 "time": time.time() - t0}
        if truth is not None:
            spec_now = layout.assemble(state.params)
            fields_now = {"b": spec_now.coeffs.b, "q": spec_now.coeffs.q,
                          "f": spec_now.f.reshape(-1), "sigma": spec_now.sigma}
            for blk in layout.blocks:
                tr = np.asarray(truth[blk.name]).reshape(-1)
                err = (np.linalg.norm(tr - fields_now[blk.name])
                       / max(np.linalg.norm(tr), 1e-300))
                entry[f"e_{blk.name}"] = float(err)
        state.history.append(entry)
        if res <= config.residual_tol * max(np.linalg.norm(g_vec), 1e-300):
            state.converged = True
            state.stop_reason = "residual_tol"
            break
        if res > (1.0 + config.rise_limit) * best_res:
            spiked += 1
            if spiked >= 3:
                state.stop_reason = "residual_rise"
                break
        else:
            spiked = 0
        rising = rising + 1 if res >= prev else 0
        if rising >= 5:
            state.stop_reason = "stagnation"
            break
        if config.jacobian_mode == "fd":
            jac = jacobian(layout, state.params, config.jacobian_step,
                           workers=config.workers)
        else:
            jac = spectral_jacobian(layout, state.params, sol,
                                    num_modes=config.num_modes)
        # per-block weights: the geometric decay applies to a multiplier of
        # the block's CURRENT normal-diagonal scale, so the damping stays
        # commensurate while the iterate (and the bilinear gauge) swings;
        # blocks with identically zero sensitivity stay frozen, and the
        # coefficient blocks wait for the source pair to take shape first
        if gammas is None:
            gammas = {}
        global_diag = float(np.max(np.einsum("ij,ij->j", jac, jac)))
        active_mask = np.zeros(layout.num_params, dtype=bool)
        g_norm = float(np.linalg.norm(g_vec))
        for blk in layout.blocks:
            sl_b = slices[blk.name]
            Jb = jac[:, sl_b]
            diag_scale = float(np.max(np.einsum("ij,ij->j", Jb, Jb)))
            live = diag_scale > 1e-10 * max(global_diag, 1e-300)
            if blk.name in ("b", "q") and res > config.coeff_gate * g_norm:
                live = False
            active_mask[sl_b] = live
            if not live:
                continue
            mult = (config.gamma0 or {}).get(blk.name, config.gamma_scale)
            decay = decays.setdefault(blk.name, 1.0)
            if config.gamma_mode == "normal":
                ref = float(np.max(np.diagonal(grams[blk.name])))
                gammas[blk.name] = mult * decay * diag_scale / max(ref, 1e-300)
            else:
                scale = float(np.max(np.abs(Jb.T @ residual_vec)))
                gammas[blk.name] = mult * decay * max(scale, 1e-300)
        entry["gammas"] = dict(gammas)
        state, gammas = lm_step(state, jac, data, layout, config, gammas,
                                residual_vec, grams, active_mask)
        rho_of = config.rho_blocks or {}
        for name in list(decays):
            if name in gammas:
                decays[name] *= rho_of.get(name, config.rho)
        _fix_scalar_split(layout, state.params)
        if state.last_step_norm <= config.step_tol * (
                1.0 + float(np.linalg.norm(state.params))):
            state.stop_reason = "step_tol"
            break
    else:
        state.stop_reason = "max_iters"
    # hand back the best-residual iterate seen
    f_vec = forward_map(layout, state.params).vector
    state.residual = float(np.linalg.norm(g_vec - f_vec))
    if state.residual > best_res:
        state.params = best_params
        state.residual = best_res
    if state.stop_reason in ("residual_tol", "step_tol"):
        state.converged = True
    return state
