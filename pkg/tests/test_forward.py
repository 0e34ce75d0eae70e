import numpy as np
import pytest

from subdiff.forward import (
    ProblemSpec,
    l1_weights,
    l2_space_time,
    quiet_window_poly_residual,
    solve_fd,
    solve_fd_2d,
    solve_spectral,
)
from subdiff.gauge import CoefficientSet, to_gauge
from subdiff.grid import Grid
from subdiff.mlf import MlfParams, eval_mlf
from subdiff.sturm_liouville import solve_eigen


def b_truth(x):
    return np.where(x < 0.25, 16 * x**3 - 12 * x**2 + 3 * x, 0.25)


def f_truth(x):
    return np.where(x < 0.5, x * np.sin(2 * np.pi * x), 0.0)


def sigma_truth(t):
    return np.where(t <= 0.05, 50.0 - 1000.0 * t, 0.0)


def demo_problem(nx, nt, alpha=0.5):
    g = Grid(nx=nx, nt=nt, ell=1.0, T=0.1)
    x, t = g.x(), g.t()
    return ProblemSpec(grid=g, alpha=alpha,
                       coeffs=CoefficientSet(b_truth(x), np.exp(-x), g),
                       f=f_truth(x), sigma=sigma_truth(t), delta=0.05)


def test_l1_weights_classical_limit():
    w = l1_weights(1.0, 8)
    assert w[0] == 1.0 and np.all(w[1:] == 0.0)
    w = l1_weights(0.5, 4)
    assert np.allclose(w, [1.0, np.sqrt(2) - 1, np.sqrt(3) - np.sqrt(2),
                           2.0 - np.sqrt(3)])


def test_zero_source_zero_solution():
    p = demo_problem(64, 64)
    p = ProblemSpec(grid=p.grid, alpha=0.5, coeffs=p.coeffs,
                    f=np.zeros(64), sigma=np.zeros(64))
    sol = solve_fd(p)
    assert np.all(sol.u == 0.0)
    assert np.all(sol.flux_right == 0.0) and np.all(sol.flux_left == 0.0)
    sp = solve_spectral(p, num_modes=8)
    assert np.max(np.abs(sp.u)) == 0.0


def test_alpha_one_heat_oracle():
    """Backward-Euler limit against the closed heat solution.

    First order in time caps the space-time error near 1.7e-3 at 512x512
    (constant ~0.85); the check pins that level and confirms the order by
    halving the step.
    """
    errs = []
    for nt in (512, 1024):
        g = Grid(nx=512, nt=nt, ell=1.0, T=1.0)
        x, t = g.x(), g.t()
        p = ProblemSpec(grid=g, alpha=1.0,
                        coeffs=CoefficientSet(np.zeros(512), np.zeros(512), g),
                        f=np.pi**2 * np.sin(np.pi * x), sigma=np.ones(nt))
        sol = solve_fd(p)
        exact = (1 - np.exp(-np.pi**2 * t))[:, None] * np.sin(np.pi * x)[None, :]
        errs.append(l2_space_time(sol.u - exact, g) / l2_space_time(exact, g))
    assert errs[0] < 2e-3
    assert errs[1] < 0.6 * errs[0]


def test_spectral_single_mode_time_factor():
    """f~ = phi_1, sigma = 1: the gauged solution is phi_1 times
    (1 - E_{a,1}(-lam_1 t^a)) / lam_1."""
    alpha = 0.5
    g = Grid(nx=256, nt=256, ell=1.0, T=0.1)
    x, t = g.x(), g.t()
    coeffs = CoefficientSet(b_truth(x), np.exp(-x), g)
    gd = to_gauge(coeffs, np.zeros(g.nx1))
    S = solve_eigen(gd.potential, 8)
    phi1, lam1 = S.eigenfunctions[:, 0], S.eigenvalues[0]
    f = phi1 / gd.exp_factor
    p = ProblemSpec(grid=g, alpha=alpha, coeffs=coeffs, f=f, sigma=np.ones(g.nt))
    sol = solve_spectral(p, num_modes=8)
    gauged = sol.u * gd.exp_factor[None, :]
    factor = np.array([0.0] + [
        (1.0 - eval_mlf(MlfParams(alpha, 1.0), -lam1 * tt**alpha)) / lam1
        for tt in t[1:]])
    ref = factor[:, None] * phi1[None, :]
    assert l2_space_time(gauged - ref, g) / l2_space_time(ref, g) < 1e-10


def test_fd_vs_spectral_cross_validation():
    p = demo_problem(256, 512)
    fd = solve_fd(p)
    sp = solve_spectral(p, num_modes=48)
    denom = l2_space_time(sp.u, p.grid)
    err_coarse = l2_space_time(fd.u - sp.u, p.grid) / denom
    assert err_coarse < 1.5e-2
    p2 = demo_problem(512, 1024)
    err_fine = (l2_space_time(solve_fd(p2).u - solve_spectral(p2, 96).u, p2.grid)
                / l2_space_time(solve_spectral(p2, 96).u, p2.grid))
    assert err_fine < err_coarse


def test_gauge_invariance_end_to_end():
    """FD on the convection form vs FD on the gauged self-adjoint form."""
    p = demo_problem(256, 256)
    gd = to_gauge(p.coeffs, p.f)
    gauged = ProblemSpec(grid=p.grid, alpha=p.alpha,
                         coeffs=CoefficientSet(np.zeros(p.grid.nx1),
                                               gd.potential.values, p.grid),
                         f=gd.f_tilde, sigma=p.sigma, delta=p.delta)
    u1 = solve_fd(p).u
    u2 = solve_fd(gauged).u / gd.exp_factor[None, :]
    mismatch = l2_space_time(u1 - u2, p.grid) / l2_space_time(u1, p.grid)
    # the two discretizations differ at the solver's own convergence error;
    # bound it by the coarse-vs-fine self-error of the convection form
    fine = demo_problem(512, 512)
    uf = solve_fd(fine).u[::2, ::2]
    self_err = l2_space_time(u1 - uf, p.grid) / l2_space_time(u1, p.grid)
    assert mismatch <= 2.0 * self_err


def test_linearity_doubling_source():
    p = demo_problem(96, 96)
    base = solve_fd(p)
    doubled = solve_fd(ProblemSpec(grid=p.grid, alpha=p.alpha, coeffs=p.coeffs,
                                   f=2.0 * p.f, sigma=p.sigma, delta=p.delta))
    assert np.array_equal(doubled.u, 2.0 * base.u)
    scaled = solve_fd(ProblemSpec(grid=p.grid, alpha=p.alpha, coeffs=p.coeffs,
                                  f=p.f, sigma=2.0 * p.sigma, delta=p.delta))
    assert np.array_equal(scaled.u, 2.0 * base.u)


def test_quiet_window_smoothness_proxy():
    p = demo_problem(256, 2048)
    sol = solve_fd(p)
    res = [quiet_window_poly_residual(sol, delta=dl)
           for dl in (0.05, 0.025, 0.0125, 0.00625)]
    assert all(a > b for a, b in zip(res, res[1:]))
    # threshold calibrated on the alpha=1 analytic run (residual ~8e-9 at
    # the smallest window; two orders of slack for the fractional trace)
    assert res[-1] < 1e-4


def grid_2d(nx1=96, nx2=48, nt=96):
    return Grid(nx=(nx1, nx2), nt=nt, ell=1.0, T=0.1)


def coeffs_1d(nx1, nt):
    g1 = Grid(nx=nx1, nt=nt, ell=1.0, T=0.1)
    x = g1.x()
    return g1, CoefficientSet(b_truth(x), np.exp(-x), g1)


def test_2d_zero_source():
    g = grid_2d()
    g1, c = coeffs_1d(96, 96)
    p = ProblemSpec(grid=g, alpha=0.5, coeffs=c,
                    f=np.zeros((96, 48)), sigma=np.zeros(96))
    sol = solve_fd_2d(p, mode="B", num_transverse=4)
    assert np.max(np.abs(sol.u)) == 0.0


def test_2d_single_transverse_mode_separates():
    g = grid_2d()
    g1, c = coeffs_1d(96, 96)
    x, y, t = g.x(), g.x2(), g.t()
    f2d = np.outer(f_truth(x), np.sqrt(2.0) * np.sin(np.pi * y))
    p = ProblemSpec(grid=g, alpha=0.5, coeffs=c, f=f2d,
                    sigma=sigma_truth(t), delta=0.05)
    sol = solve_fd_2d(p, mode="B", num_transverse=6)
    p1 = ProblemSpec(grid=g1, alpha=0.5, coeffs=c, f=f_truth(x),
                     sigma=sigma_truth(t), delta=0.05)
    ref1d = solve_fd(p1, extra_q=np.pi**2)
    ref = ref1d.u[:, :, None] * (np.sqrt(2.0) * np.sin(np.pi * y))[None, None, :]
    assert l2_space_time(sol.u - ref, g) / l2_space_time(ref, g) < 1e-13


def test_2d_mode_a_vs_mode_b():
    g = grid_2d(128, 64, 96)
    g1, c = coeffs_1d(128, 96)
    x, y, t = g.x(), g.x2(), g.t()
    f2d = np.outer(f_truth(x), np.sin(np.pi * y) + 0.4 * np.sin(2 * np.pi * y))
    p = ProblemSpec(grid=g, alpha=0.5, coeffs=c, f=f2d,
                    sigma=sigma_truth(t), delta=0.05)
    sB = solve_fd_2d(p, mode="B", num_transverse=12)
    sA = solve_fd_2d(p, mode="A")
    rel = l2_space_time(sA.u - sB.u, g) / l2_space_time(sB.u, g)
    assert rel < 1e-3
    flux_rel = (np.linalg.norm(sA.flux_right - sB.flux_right)
                / np.linalg.norm(sB.flux_right))
    assert flux_rel < 2e-3


def test_spec_validation_errors():
    g = Grid(nx=64, nt=64, ell=1.0, T=0.1)
    x, t = g.x(), g.t()
    c = CoefficientSet(np.zeros(64), np.zeros(64), g)
    with pytest.raises(ValueError):
        ProblemSpec(grid=g, alpha=1.5, coeffs=c, f=np.zeros(64), sigma=np.zeros(64))
    with pytest.raises(ValueError):
        ProblemSpec(grid=g, alpha=0.5, coeffs=c, f=np.zeros(63), sigma=np.zeros(64))
    with pytest.raises(ValueError):  # sigma alive in the quiet window
        ProblemSpec(grid=g, alpha=0.5, coeffs=c, f=np.zeros(64),
                    sigma=np.ones(64), delta=0.05)
    with pytest.raises(ValueError):  # Peclet violation
        ProblemSpec(grid=g, alpha=0.5,
                    coeffs=CoefficientSet(np.full(64, 500.0), np.zeros(64), g),
                    f=np.zeros(64), sigma=np.zeros(64))


def test_tail_warning_for_rough_source():
    g = Grid(nx=256, nt=64, ell=1.0, T=0.1)
    x, t = g.x(), g.t()
    rng = np.random.default_rng(5)
    p = ProblemSpec(grid=g, alpha=0.5,
                    coeffs=CoefficientSet(np.zeros(256), np.zeros(256), g),
                    f=rng.standard_normal(256), sigma=np.ones(64))
    with pytest.warns(UserWarning, match="tail"):
        solve_spectral(p, num_modes=8)
