"""Command-line entry point.

Subcommands
    forward     solve one forward problem, write flux trace + snapshots
    reproduce   run the packaged experiments (cases a-d) end to end
    invert      custom inversion from a config file and a data record
    diag        on-demand property checks (mlf / eigen / laplace / gauge)

The CLI emits data only (CSV + JSON); figures are rendered by the separate
plotting scripts from these files.  Exit codes: 0 success, 1 numerical or
invariant failure, 2 usage/config errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import cases as case_mod
from .cases import CASES, NOISE_LEVELS, SEEDS, default_config, materialize, score
from .forward import (
    NumericError,
    ProblemSpec,
    quiet_window_poly_residual,
    solve_fd,
    solve_spectral,
)
from .gauge import CoefficientSet, to_gauge
from .grid import Grid
from .invert import run_inversion
from .mlf import MlfParams, _asymptotic, _integral, _series, eval_mlf
from .observe import default_abscissae, extract, laplace_diag, save_record
from .sturm_liouville import PotentialField, counting_report, solve_eigen

VERSION = "0.1.0"


class ConfigError(ValueError):
    pass


def write_manifest(out: Path, command: str, config_blob: str,
                   seeds=None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config_hash": hashlib.sha256(config_blob.encode()).hexdigest()[:16],
        "out_dir": str(out),
        "seeds": list(seeds) if seeds is not None else None,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "version": VERSION,
        "completed": False,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def complete_manifest(path: Path) -> None:
    manifest = json.loads(path.read_text())
    manifest["completed"] = True
    manifest["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    path.write_text(json.dumps(manifest, indent=2))


def _field_from_config(node, coords, name):
    if node is None:
        raise ConfigError(f"missing field {name!r} in config")
    kind = node.get("kind")
    if kind == "constant":
        return np.full(coords.size, float(node["value"]))
    if kind == "nodal":
        vals = np.asarray(node["values"], dtype=float)
        if vals.size != coords.size:
            raise ConfigError(
                f"field {name!r}: {vals.size} nodal values for "
                f"{coords.size} grid nodes")
        return vals
    if kind == "case_truth":
        fn = {"b": case_mod.b_truth, "q": case_mod.q_truth,
              "f": case_mod.f_truth, "sigma": case_mod.sigma_truth}[name]
        return fn(coords)
    raise ConfigError(f"field {name!r}: unknown kind {kind!r}")


def load_forward_config(path: Path, args) -> ProblemSpec:
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}") from exc
    nx = args.nodes_x or raw.get("nx")
    nt = args.nodes_t or raw.get("nt")
    for key, val in (("nx", nx), ("nt", nt), ("alpha", raw.get("alpha"))):
        if val is None:
            raise ConfigError(f"config misses required field {key!r}")
    grid = Grid(nx=int(nx), nt=int(nt), ell=float(raw.get("ell", 1.0)),
                T=float(raw.get("T", 0.1)))
    x, t = grid.x(), grid.t()
    b = _field_from_config(raw.get("b"), x, "b")
    q = _field_from_config(raw.get("q"), x, "q")
    f = _field_from_config(raw.get("f"), x, "f")
    sigma = _field_from_config(raw.get("sigma"), t, "sigma")
    return ProblemSpec(grid=grid, alpha=float(raw["alpha"]),
                       coeffs=CoefficientSet(b, q, grid), f=f, sigma=sigma,
                       delta=float(raw.get("delta", 0.0)))


def cmd_forward(args) -> int:
    config_path = Path(args.config)
    spec = load_forward_config(config_path, args)
    out = Path(args.out)
    manifest = write_manifest(out, "forward", config_path.read_text())
    sol = solve_fd(spec)
    rec = extract(sol, "boundary_flux_right")
    save_record(rec, out / "flux")
    sidecar = {"alpha": spec.alpha,
               "grid": {"nx": spec.grid.nx, "nt": spec.grid.nt,
                        "ell": spec.grid.ell, "T": spec.grid.T},
               "spec_hash": hashlib.sha256(
                   spec.f.tobytes() + spec.sigma.tobytes()
                   + spec.coeffs.b.tobytes()).hexdigest()[:16]}
    (out / "flux_meta.json").write_text(json.dumps(sidecar, indent=2))
    snaps = np.linspace(0, spec.grid.nt - 1, 9, dtype=int)
    header = "x," + ",".join(f"u_t{spec.grid.t()[n]:.6g}" for n in snaps)
    np.savetxt(out / "snapshots.csv",
               np.column_stack([spec.grid.x()] + [sol.u[n] for n in snaps]),
               delimiter=",", header=header, comments="", fmt="%.17g")
    complete_manifest(manifest)
    print(f"forward solve written to {out}")
    return 0


def run_one_case(case_id: str, scale: str, eps: float, seed: int,
                 out_root: Path) -> dict:
    case = CASES[case_id]
    sc = case.scale(scale)
    rec, truth = materialize(case, scale, eps, seed)
    layout = case.layout(sc.inv_grid, sc.inv_transverse)
    cfg = default_config(case, scale)
    t0 = time.time()
    state = run_inversion(layout, rec, cfg,
                          initial_params=case.initial_params(layout),
                          truth=truth)
    wall = time.time() - t0
    rep = score(case, layout, state.params, truth, iterations=state.k,
                wall_time=wall, converged=state.converged,
                noise_level=eps, seed=seed)
    out = out_root / case_id / f"{eps:g}" / str(seed)
    out.mkdir(parents=True, exist_ok=True)
    spec_hat = layout.assemble(state.params)
    grid = layout.grid
    x = grid.x()
    tgrid = grid.t()
    if grid.is_2d:
        f_true2 = truth["f"]
        np.savetxt(out / "fields2d.csv",
                   np.column_stack([np.repeat(x, grid.nx_tuple[1]),
                                    np.tile(grid.x2(), grid.nx1),
                                    f_true2.reshape(-1),
                                    spec_hat.f.reshape(-1)]),
                   delimiter=",", header="x1,x2,f_truth,f_hat",
                   comments="", fmt="%.17g")
        fields = np.column_stack([x, truth["b"], spec_hat.coeffs.b,
                                  truth["q"], spec_hat.coeffs.q])
        np.savetxt(out / "fields.csv", fields, delimiter=",",
                   header="x,b_truth,b_hat,q_truth,q_hat", comments="",
                   fmt="%.17g")
    else:
        fields = np.column_stack([x, truth["b"], spec_hat.coeffs.b,
                                  truth["q"], spec_hat.coeffs.q,
                                  truth["f"], spec_hat.f])
        np.savetxt(out / "fields.csv", fields, delimiter=",",
                   header="x,b_truth,b_hat,q_truth,q_hat,f_truth,f_hat",
                   comments="", fmt="%.17g")
    np.savetxt(out / "sigma.csv",
               np.column_stack([tgrid, truth["sigma"], spec_hat.sigma]),
               delimiter=",", header="t,sigma_truth,sigma_hat", comments="",
               fmt="%.17g")
    hist_keys = ["iter", "residual", "time", "e_b", "e_q", "e_f", "e_sigma"]
    rows = [[h.get(k, np.nan) for k in hist_keys] for h in state.history]
    np.savetxt(out / "history.csv", np.asarray(rows, dtype=float),
               delimiter=",", header=",".join(hist_keys), comments="",
               fmt="%.17g")
    summary = {"case": case_id, "scale": scale, "noise_level": eps,
               "seed": seed, "errors": rep.errors, "iterations": state.k,
               "wall_time": wall, "converged": state.converged,
               "stop_reason": state.stop_reason,
               "split_scalar": rep.split_scalar}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary


def cmd_reproduce(args) -> int:
    if args.case not in CASES:
        print(f"unknown case id {args.case!r} (use a, b, c or d)",
              file=sys.stderr)
        return 2
    eps_list = args.eps if args.eps is not None else list(NOISE_LEVELS[args.case])
    seeds = args.seed if args.seed is not None else [SEEDS[0]]
    out_root = Path(args.out)
    manifest = write_manifest(out_root, f"reproduce {args.case}",
                              json.dumps({"case": args.case, "eps": eps_list,
                                          "scale": args.scale}), seeds)
    rows = []
    try:
        for eps in eps_list:
            for seed in (seeds if eps > 0 else seeds[:1]):
                summary = run_one_case(args.case, args.scale, float(eps),
                                       int(seed), out_root)
                rows.append(summary)
    except NumericError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    err_names = sorted({k for r in rows for k in r["errors"]})
    header = "eps      seed   " + "  ".join(f"{n:>10s}" for n in err_names)
    print(header)
    for r in rows:
        cells = "  ".join(f"{r['errors'].get(n, float('nan')):10.4g}"
                          for n in err_names)
        print(f"{r['noise_level']:<8g} {r['seed']:<6d} {cells}")
    complete_manifest(manifest)
    return 0


def cmd_invert(args) -> int:
    try:
        raw = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as exc:
        print(f"config parse error: {exc}", file=sys.stderr)
        return 2
    case_id = raw.get("case")
    if case_id not in CASES:
        print("custom inversion configs reference a base case via 'case'",
              file=sys.stderr)
        return 2
    from .observe import load_record
    rec = load_record(Path(args.data).with_suffix(""))
    case = CASES[case_id]
    scale = raw.get("scale", "desk")
    sc = case.scale(scale)
    rec = case_mod.resample_record(rec, sc.inv_grid)
    layout = case.layout(sc.inv_grid, sc.inv_transverse)
    cfg = default_config(case, scale)
    for key in ("rho", "max_iters", "residual_tol"):
        if key in raw:
            setattr(cfg, key, raw[key])
    out = Path(args.out)
    manifest = write_manifest(out, "invert", Path(args.config).read_text())
    state = run_inversion(layout, rec, cfg,
                          initial_params=case.initial_params(layout))
    np.savetxt(out / "params.csv", state.params[None, :], delimiter=",",
               fmt="%.17g")
    (out / "state.json").write_text(json.dumps(
        {"residual": state.residual, "iterations": state.k,
         "stop_reason": state.stop_reason}, indent=2))
    complete_manifest(manifest)
    print(f"inversion finished: residual {state.residual:.3e} "
          f"after {state.k} iterations")
    return 0


def diag_mlf(out: Path) -> tuple[bool, dict]:
    checks = {}
    p = MlfParams(1.0, 1.0)
    zs = np.linspace(-30, 30, 31)
    exp_dev = max(abs(eval_mlf(p, z) - np.exp(z)) / np.exp(z) for z in zs)
    checks["exp_reduction"] = {"dev": float(exp_dev), "pass": bool(exp_dev < 1e-13)}
    rows = []
    for alpha in (3 / (2 * np.pi), 0.5, 0.75):
        for beta in (1.0, alpha):
            s_val = _series(alpha, beta, -10.0)
            i_val = _integral(alpha, beta, 10.0)
            a_val, _ = _asymptotic(alpha, beta, 100.0)
            i_val2 = _integral(alpha, beta, 100.0)
            r1 = abs(s_val - i_val) / abs(i_val)
            r2 = abs(a_val - i_val2) / abs(i_val2)
            rows.append([alpha, beta, r1, r2])
    worst = max(max(r[2], r[3]) for r in rows)
    checks["regime_continuity"] = {"dev": float(worst), "pass": bool(worst < 1e-10)}
    np.savetxt(out / "mlf_continuity.csv", np.asarray(rows), delimiter=",",
               header="alpha,beta,series_vs_integral,integral_vs_asymptotic",
               comments="", fmt="%.17g")
    return all(c["pass"] for c in checks.values()), checks


def diag_eigen(out: Path) -> tuple[bool, dict]:
    g = Grid(nx=1024, nt=16)
    x = g.x()
    S0 = solve_eigen(PotentialField(np.zeros(g.nx1), g), 24)
    exact = (np.arange(1, 25) * np.pi) ** 2
    dev = float(np.max(np.abs(S0.eigenvalues[:3] - exact[:3]) / exact[:3]))
    SV = solve_eigen(PotentialField(np.exp(-x), g), 24)
    drift = np.abs(SV.eigenvalues - S0.eigenvalues - (1 - np.exp(-1.0)))
    np.savetxt(out / "weyl_drift.csv",
               np.column_stack([np.arange(1, 25), SV.eigenvalues,
                                SV.dphi_right, SV.eigenvalues - S0.eigenvalues,
                                drift]),
               delimiter=",",
               header="k,lambda_k,dphi_at_ell,shift_vs_free,drift",
               comments="", fmt="%.17g")
    checks = {
        "laplacian_modes": {"dev": float(dev), "pass": bool(dev < 1e-3)},
        "weyl_drift": {"dev": float(np.max(drift[9:20])),
                       "pass": bool(np.max(drift[9:20]) < 5e-2)},
    }
    return all(c["pass"] for c in checks.values()), checks


def diag_laplace(out: Path) -> tuple[bool, dict]:
    case = CASES["a"]
    sc = case.scale("desk")
    grid = sc.gen_grid
    truth = case.truth_fields(grid)
    spec = ProblemSpec(grid=grid, alpha=case.alpha,
                       coeffs=CoefficientSet(truth["b"], truth["q"], grid),
                       f=truth["f"], sigma=truth["sigma"], delta=0.05)
    rec = extract(solve_fd(spec), "boundary_flux_right")
    gd = to_gauge(spec.coeffs, spec.f)
    S = solve_eigen(gd.potential, 64)
    diag = laplace_diag(rec, S, gd, spec.sigma, alpha=case.alpha)
    np.savetxt(out / "laplace_consistency.csv",
               np.column_stack([diag.p_samples, diag.h_hat_numeric,
                                diag.h_hat_series]),
               delimiter=",", header="p,h_hat_numeric,h_hat_series",
               comments="", fmt="%.17g")
    ok = bool(diag.max_rel_deviation < 1e-2)
    return ok, {"laplace": {"dev": float(diag.max_rel_deviation), "pass": ok}}


def diag_gauge(out: Path) -> tuple[bool, dict]:
    from .forward import l2_space_time
    g = Grid(nx=256, nt=256)
    x, t = g.x(), g.t()
    coeffs = CoefficientSet(case_mod.b_truth(x), case_mod.q_truth(x), g)
    f = case_mod.f_truth(x)
    spec = ProblemSpec(grid=g, alpha=0.5, coeffs=coeffs, f=f,
                       sigma=case_mod.sigma_truth(t), delta=0.05)
    gd = to_gauge(coeffs, f)
    gauged = ProblemSpec(grid=g, alpha=0.5,
                         coeffs=CoefficientSet(np.zeros(g.nx1),
                                               gd.potential.values, g),
                         f=gd.f_tilde, sigma=spec.sigma, delta=0.05)
    u1 = solve_fd(spec).u
    u2 = solve_fd(gauged).u / gd.exp_factor[None, :]
    mismatch = l2_space_time(u1 - u2, g) / l2_space_time(u1, g)
    ok = bool(mismatch < 1e-2)
    (out / "gauge_invariance.csv").write_text(
        "mismatch\n%.17g\n" % mismatch)
    return ok, {"gauge_invariance": {"dev": float(mismatch), "pass": ok}}


def cmd_diag(args) -> int:
    out = Path(args.out)
    manifest = write_manifest(out, f"diag {args.kind}", args.kind)
    runner = {"mlf": diag_mlf, "eigen": diag_eigen, "laplace": diag_laplace,
              "gauge": diag_gauge}.get(args.kind)
    if runner is None:
        print(f"unknown diagnostic {args.kind!r}", file=sys.stderr)
        return 2
    ok, checks = runner(out)
    (out / "report.json").write_text(json.dumps(
        {"kind": args.kind, "pass": ok, "checks": checks}, indent=2,
        default=float))
    complete_manifest(manifest)
    for name, c in checks.items():
        print(f"{name}: {'pass' if c['pass'] else 'FAIL'} (dev {c['dev']:.3e})")
    if not ok:
        print("diagnostic failed", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="subdiff",
        description="time-fractional convection-diffusion: forward solves, "
                    "experiment reproduction, inversion and diagnostics")
    sub = ap.add_subparsers(dest="command", required=True)

    fw = sub.add_parser("forward", help="solve a forward problem from a config")
    fw.add_argument("--config", required=True)
    fw.add_argument("--out", required=True)
    fw.add_argument("--nodes-x", type=int, default=None)
    fw.add_argument("--nodes-t", type=int, default=None)
    fw.set_defaults(func=cmd_forward)

    rp = sub.add_parser("reproduce", help="run a packaged experiment")
    rp.add_argument("--case", required=True)
    rp.add_argument("--scale", default="desk", choices=["desk", "full"])
    rp.add_argument("--eps", type=float, nargs="*", default=None)
    rp.add_argument("--seed", type=int, nargs="*", default=None)
    rp.add_argument("--out", default="results")
    rp.set_defaults(func=cmd_reproduce)

    iv = sub.add_parser("invert", help="custom inversion from config + data")
    iv.add_argument("--config", required=True)
    iv.add_argument("--data", required=True)
    iv.add_argument("--out", required=True)
    iv.set_defaults(func=cmd_invert)

    dg = sub.add_parser("diag", help="run module diagnostics")
    dg.add_argument("--kind", required=True,
                    choices=["mlf", "eigen", "laplace", "gauge"])
    dg.add_argument("--out", required=True)
    dg.add_argument("--modes", type=int, default=None)
    dg.set_defaults(func=cmd_diag)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
