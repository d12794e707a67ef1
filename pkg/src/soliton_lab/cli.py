"""Command-line driver: ``soliton-lab {soliton,evolve,perturb,verify,sweep}``.

Exit codes: 0 when every check passes, 1 on errors, 2 when a check fails.
"""

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .errors import (
    BoundViolationError,
    ConfigurationError,
    DataInconsistencyError,
    SolitonLabError,
    StepRejectedError,
)
from .flow_evolution import evolve_flow, find_m_of_t, flow_bounds_check, flow_pde_residual
from .perturbation import (
    eta_transform,
    make_initial_data,
    manufactured_solution_error,
    march,
    pde_rhs_pointwise,
    picard_solve,
    reconstruct_and_residual,
    zeta_xi_rhs_pointwise,
)
from .soliton_ode import (
    SolitonParams,
    equilibria_and_linearization,
    explicit_profile,
    find_x_crit,
    fit_asymptotics,
    g_profile,
    gradient_identities,
    hc_profile,
    integrate_trajectory,
    lyapunov_check,
    numerical_jacobian,
    soliton_residual,
)
from .weights import WeightConfig, background_coefficients, comparison_and_A_check

EXIT_OK, EXIT_ERROR, EXIT_CHECK = 0, 1, 2
CHECK_ERRORS = (BoundViolationError, StepRejectedError, DataInconsistencyError, ConfigurationError)


def _bool(v):
    if isinstance(v, bool):
        return v
    if str(v).lower() in ("1", "true", "yes", "on"):
        return True
    if str(v).lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _pair(v):
    if isinstance(v, (tuple, list)):
        lo, hi = v
    else:
        lo, hi = (float(p) for p in str(v).split(","))
    return (float(lo), float(hi))


def _opt_float(v):
    return None if v in (None, "", "auto", "None") else float(v)


def _values(v):
    if isinstance(v, (list, tuple)):
        return list(v)
    return [p.strip() for p in str(v).split(",") if p.strip()]


# key -> (default, parser)
KEYS = {
    "n": (4, int),
    "lambda": (0.0, float),
    "case": ("HC", str),
    "eps_init": (1e-2, float),
    "tol": (1e-10, float),
    "y_min": (-30.0, float),
    "dy": (0.01, float),
    "x_crit": (1.0, float),
    "x_far": (60.0, float),
    "box": (0.5, float),
    "delta_fraction": (0.5, float),
    "alpha": (3, int),
    "sigma": (10.0, float),
    "x0": (None, _opt_float),
    "grid.n": (2000, int),
    "grid.xmax": (20.0, float),
    "dt": (1e-3, float),
    "T": (0.05, float),
    "init.shape": ("bump", str),
    "init.amplitude": (1e-3, float),
    "init.support": ((0.5, 1.5), _pair),
    "picard.max_iter": (50, int),
    "picard.tol": (1e-10, float),
    "g_min": (1e-3, float),
    "selftest": (True, _bool),
    "selftest.tol": (0.05, float),
    "flow.t_long": (10.0, float),
    "flow.check_x": (0.1, float),
    "flow.check_t": (0.05, float),
    "identity.window": ((0.05, 20.0), _pair),
    "check_explicit": (False, _bool),
    "seed": (0, int),
    "sweep.task": ("mms", str),
    "sweep.param": ("grid.n", str),
    "sweep.values": (["500", "1000", "2000"], _values),
    "sweep.dt": (1e-4, float),
    "sweep.T": (0.01, float),
    "jobs": (0, int),
}


def validate(cfg):
    """Check every key against the module preconditions; raises ValueError."""
    if cfg["n"] < 2:
        raise ValueError("n must be >= 2")
    if cfg["case"] not in ("HC", "G"):
        raise ValueError("case must be HC or G")
    if cfg["case"] == "HC" and cfg["lambda"] != 0:
        raise ValueError("case HC requires lambda = 0")
    if cfg["case"] == "G" and cfg["lambda"] == 0:
        raise ValueError("case G needs lambda != 0")
    if not 0 < cfg["eps_init"] < 0.5:
        raise ValueError("eps_init must lie in (0, 0.5)")
    for k in ("tol", "dy", "sigma", "dt", "T", "picard.tol", "selftest.tol", "x_crit",
              "grid.xmax", "box", "flow.t_long", "sweep.dt", "sweep.T"):
        if not cfg[k] > 0:
            raise ValueError(f"{k} must be positive")
    if cfg["alpha"] < 1:
        raise ValueError("alpha must be >= 1")
    if cfg["grid.n"] < 3:
        raise ValueError("grid.n must be >= 3")
    if cfg["picard.max_iter"] < 1:
        raise ValueError("picard.max_iter must be >= 1")
    steps = cfg["T"] / cfg["dt"]
    if abs(steps - round(steps)) > 1e-9 * steps or round(steps) < 2:
        raise ValueError("T must be an integer multiple (>= 2) of dt")
    if cfg["init.shape"] not in ("bump", "sine-packet", "zero"):
        raise ValueError("init.shape must be bump, sine-packet or zero")
    if cfg["lambda"] < 0 and 1 + 2 * cfg["lambda"] * cfg["T"] <= 0.5:
        raise ValueError("T too long: 1 + 2 lambda T must exceed 1/2")
    if not 0 < cfg["delta_fraction"] <= 1:
        raise ValueError("delta_fraction must lie in (0, 1]")
    if cfg["sweep.task"] not in ("mms", "eigen", "perturb", "soliton"):
        raise ValueError("sweep.task must be mms, eigen, perturb or soliton")
    if cfg["sweep.param"] not in KEYS:
        raise ValueError(f"unknown sweep.param {cfg['sweep.param']!r}")
    return cfg


def resolve_config(args_dict, config_path=None):
    cfg = {k: v[0] for k, v in KEYS.items()}
    raw = {}
    if config_path:
        raw.update(io.read_kv_config(config_path))
    raw.update({k: v for k, v in args_dict.items() if v is not None})
    for k, v in raw.items():
        if k not in KEYS:
            raise ValueError(f"unknown configuration key {k!r}")
        cfg[k] = KEYS[k][1](v)
    return validate(cfg)


# ---------------------------------------------------------------- shared builders

def build_profile(cfg):
    n = cfg["n"]
    if cfg["case"] == "HC":
        return hc_profile(n, eps=cfg["eps_init"], x_crit=cfg["x_crit"], tol=cfg["tol"],
                          x_far=cfg["x_far"], y_min=cfg["y_min"], dy=cfg["dy"])
    return g_profile(n, cfg["lambda"], eps=cfg["eps_init"], tol=cfg["tol"], y_min=cfg["y_min"],
                     dy=cfg["dy"], box=cfg["box"])


def build_grids(cfg, profile):
    N = cfg["grid.n"]
    xmax = cfg["grid.xmax"] if cfg["case"] == "HC" else cfg["delta_fraction"] * profile.x_max
    x = np.linspace(xmax / N, xmax, N)
    steps = int(round(cfg["T"] / cfg["dt"]))
    t = np.linspace(0.0, steps * cfg["dt"], steps + 1)
    return x, t


def weight_config(cfg, x_grid):
    x0 = cfg["x0"]
    if x0 is None:
        x0 = 1.0 if cfg["case"] == "HC" else float(x_grid[-1])
    return WeightConfig(alpha=cfg["alpha"], sigma=cfg["sigma"], x0=x0, case=cfg["case"])


def _check(name, ok, value=None, target=None):
    return {"name": name, "pass": bool(ok), "value": value, "target": target}


# ---------------------------------------------------------------- commands

def run_soliton(cfg, out):
    prof = build_profile(cfg)
    n = cfg["n"]
    checks = []
    rep = fit_asymptotics(prof)
    rn = np.sqrt(n)
    checks.append(_check("psi_exponent", abs(rep.deviations["psi"]) <= 0.01, rep.slopes["psi"], 1 / rn))
    checks.append(_check("x_omega_limit", abs(rep.limits["x_omega"] - (rn - 1)) <= 0.01,
                         rep.limits["x_omega"], rn - 1))
    checks.append(_check("x2_psi2_over_psi_limit",
                         abs(rep.limits["x2_psi2_over_psi"] + (rn - 1) / n) <= 0.02,
                         rep.limits["x2_psi2_over_psi"], -(rn - 1) / n))
    res = soliton_residual(prof, differentiate=True, relative=True)
    checks.append(_check("ode_residual_relative", max(res) <= 1e-6, max(res), 1e-6))
    payload = {"asymptotics": rep.to_dict(), "residual_relative": list(res)}
    eq = equilibria_and_linearization(n, cfg["lambda"])
    payload["equilibria"] = [{"state": list(s), "eigenvalues": e} for s, e in eq]
    jac_eigs = np.sort(np.linalg.eigvals(numerical_jacobian((0.0, 1.0, 0.0), n, cfg["lambda"])).real)
    payload["source_jacobian_eigenvalues"] = jac_eigs.tolist()
    if cfg["case"] == "HC":
        xc = find_x_crit(prof)
        ids = gradient_identities(prof, x_window=cfg["identity.window"])
        payload.update(x_crit=xc, identities=ids.to_dict())
        checks.append(_check("c0_positive", ids.c0 > 0, ids.c0, 0.0))
        checks.append(_check("identity_drift", ids.drift < 1e-5, ids.drift, 1e-5))
        params = SolitonParams.near_source(n, eps=cfg["eps_init"])
        traj = integrate_trajectory(params, y_min=-20.0, y_max=20.0, tol=cfg["tol"], dy=cfg["dy"])
        lres = lyapunov_check(traj)
        payload["lyapunov_residual"] = lres
    if cfg["check_explicit"]:
        if n != 4:
            raise ValueError("check_explicit needs n = 4")
        ex = soliton_residual(explicit_profile(1.0))
        payload["explicit_residual"] = list(ex)
        checks.append(_check("explicit_residual", max(ex) < 1e-9, max(ex), 1e-9))
    payload["checks"] = checks
    traj_cols = {"y": prof.ys, "x": prof.xs, "W": prof.states[:, 0], "X": prof.states[:, 1],
                 "Y": prof.states[:, 2]}
    io.write_csv(out / "trajectory.csv", traj_cols, cfg)
    io.write_csv(out / "profile.csv", io.profile_columns(prof), cfg)
    io.write_json(out / "asymptotics.json", payload, cfg)
    return payload


def run_evolve(cfg, out):
    prof = build_profile(cfg)
    x, t = build_grids(cfg, prof)
    flow = evolve_flow(prof, x, t, tol=cfg["tol"])
    checks = []
    payload = {}
    try:
        b = flow_bounds_check(flow, x_max=cfg["flow.check_x"], t_max=cfg["flow.check_t"])
        payload["bounds"] = b.to_dict()
        checks.append(_check("push_bounds", True, b.lower_margin, 0.0))
    except BoundViolationError as exc:
        payload["bounds"] = {"error": str(exc)}
        checks.append(_check("push_bounds", False))
    m = find_m_of_t(flow)
    payload["m_of_t"] = {"t": t, "m": m.m, "m_extrapolated": m.m_extrapolated}
    checks.append(_check("m_monotone", m.monotone))
    payload["pde_residual"] = flow_pde_residual(flow).to_dict()
    if cfg["case"] == "HC":
        t_long = np.linspace(0.0, cfg["flow.t_long"], 201)
        long = evolve_flow(prof, x, t_long, tol=cfg["tol"])
        ml = find_m_of_t(long)
        payload["long_horizon"] = ml.to_dict()
        checks.append(_check("m_to_x_crit", ml.x_crit_gap is not None and ml.x_crit_gap < 1e-3,
                             ml.x_crit_gap, 1e-3))
    payload["checks"] = checks
    io.write_csv(out / "flow.csv", flow.rows(), cfg)
    io.write_json(out / "flow.json", payload, cfg)
    return payload


def perturb_setup(cfg):
    prof = build_profile(cfg)
    x, t = build_grids(cfg, prof)
    flow = evolve_flow(prof, x, t, tol=cfg["tol"])
    coeffs = background_coefficients(flow)
    wcfg = weight_config(cfg, x)
    return prof, flow, coeffs, wcfg


def run_perturb(cfg, out):
    prof, flow, coeffs, wcfg = perturb_setup(cfg)
    payload = {"weight": {"alpha": wcfg.alpha, "sigma": wcfg.sigma, "x0": wcfg.x0}}
    if cfg["selftest"]:
        err = manufactured_solution_error(flow, coeffs, fast=True, relative=True)
        payload["selftest_relative_error"] = err
        if err > cfg["selftest.tol"]:
            raise StepRejectedError(
                f"manufactured-solution self-test error {err:.3e} > {cfg['selftest.tol']:g} at dt = {cfg['dt']:g}")
    init, e0 = make_initial_data(cfg["init.shape"], cfg["init.amplitude"], cfg["init.support"],
                                 flow, wcfg)
    series, rep = picard_solve(init, coeffs, flow, wcfg, max_iter=cfg["picard.max_iter"],
                               tol=cfg["picard.tol"], g_min=cfg["g_min"])
    comp = comparison_and_A_check(coeffs, wcfg, flow)
    _, _, resid = reconstruct_and_residual(series, flow)
    checks = [_check("picard_converged", rep.converged),
              _check("kappa_below_one", all(k < 1 for k in rep.kappa_estimates),
                     max(rep.kappa_estimates, default=0.0), 1.0),
              _check("energy_bound", rep.bound_ok, rep.energy.e_total, 2 * rep.first_iterate_energy)]
    payload.update(e0=e0, picard=rep.to_dict(), comparison=comp.to_dict(),
                   residual={k: v for k, v in resid.items() if k.startswith(("sup", "l2"))},
                   kappa_below_quarter=rep.kappa_below_quarter, checks=checks)
    io.write_csv(out / "solution.csv", io.solution_columns(flow.t_grid, flow.x_grid, *series), cfg)
    io.write_json(out / "energy.json", rep.energy.to_dict(), cfg)
    io.write_json(out / "picard.json", rep.to_dict(), cfg)
    io.write_json(out / "residual.json", payload["residual"], cfg)
    io.write_json(out / "perturb.json", payload, cfg)
    return payload


def run_verify(cfg, out):
    """A fast battery of structural checks across all modules."""
    rng = np.random.default_rng(cfg["seed"])
    checks = []
    ex = soliton_residual(explicit_profile(1.0))
    checks.append(_check("explicit_residual", max(ex) < 1e-9, max(ex), 1e-9))
    for n in (2, 4, 9):
        eig = np.sort(np.linalg.eigvals(numerical_jacobian((0.0, 1.0, 0.0), n, 0.0)).real)
        target = np.sort([1.0, 2.0, 1.0 - 1 / np.sqrt(n)])
        checks.append(_check(f"source_eigenvalues_n{n}", np.max(np.abs(eig - target)) < 1e-6,
                             eig.tolist(), target.tolist()))
    n = 4
    worst = 0.0
    for _ in range(50):
        z, x = rng.uniform(-0.3, 0.3, 2)
        zs, xs, xss, p, q, r = rng.normal(size=6)
        zt, xt = zeta_xi_rhs_pointwise(z, x, zs, xs, xss, p, q, r, n)
        eta = eta_transform(z, x, n)
        eta_s = 2 * (z + 1) * zs / (x + 1) ** (2 * n) - 2 * n * (z + 1) ** 2 * xs / (x + 1) ** (2 * n + 1)
        et, xt2 = pde_rhs_pointwise(eta, x, eta_s, xs, xss, p, q + (n - 1) * p * p, r, n)
        chain = 2 * (z + 1) * zt / (x + 1) ** (2 * n) - 2 * n * (z + 1) ** 2 * xt / (x + 1) ** (2 * n + 1)
        worst = max(worst, abs(et - chain), abs(xt - xt2))
    checks.append(_check("system_equivalence", worst < 1e-10, worst, 1e-10))
    small = dict(cfg, **{"grid.n": 200, "T": 0.01, "dt": 1e-3})
    prof, flow, coeffs, wcfg = perturb_setup(small)
    z = np.zeros(flow.rho.shape)
    init, _ = make_initial_data("zero", 0.0, (0.5, 1.5), flow, wcfg)
    eta, xi = march(init, coeffs, z, z, 1e-3)
    sup = float(max(np.abs(eta).max(), np.abs(xi).max()))
    checks.append(_check("fixed_point", sup <= 1e-12, sup, 1e-12))
    payload = {"checks": checks}
    io.write_json(out / "verify.json", payload, cfg)
    return payload


def _sweep_cell(task, cfg, cell_dir=None):
    row = _sweep_row(task, cfg)
    if cell_dir is not None:
        io.write_json(Path(cell_dir) / "cell.json", dict(row, value=cfg[cfg["sweep.param"]]), cfg)
    return row


def _sweep_row(task, cfg):
    row = {}
    try:
        if task == "eigen":
            n = cfg["n"]
            eig = np.sort(np.linalg.eigvals(numerical_jacobian((0.0, 1.0, 0.0), n, cfg["lambda"])).real)
            target = np.sort([1.0, 2.0, 1.0 - 1 / np.sqrt(n)])
            row.update({f"eig{i}": v for i, v in enumerate(eig)})
            row["max_dev"] = float(np.max(np.abs(eig - target)))
            row["ok"] = row["max_dev"] < 1e-6
        elif task == "mms":
            c = dict(cfg, T=cfg["sweep.T"], dt=cfg["sweep.dt"])
            if cfg["sweep.param"] == "dt":
                c["dt"] = cfg["dt"]
            _, flow, coeffs, _ = perturb_setup(c)
            row["error"] = manufactured_solution_error(flow, coeffs, fast=cfg["sweep.param"] == "dt")
            row["ok"] = bool(np.isfinite(row["error"]))
        elif task == "soliton":
            rep = fit_asymptotics(build_profile(cfg))
            row.update(psi_slope=rep.slopes["psi"], x_omega=rep.limits["x_omega"],
                       x2_psi2_over_psi=rep.limits["x2_psi2_over_psi"])
            row["ok"] = abs(rep.deviations["psi"]) <= 0.01
        elif task == "perturb":
            _, flow, coeffs, wcfg = perturb_setup(cfg)
            init, e0 = make_initial_data(cfg["init.shape"], cfg["init.amplitude"],
                                         cfg["init.support"], flow, wcfg)
            _, rep = picard_solve(init, coeffs, flow, wcfg, max_iter=cfg["picard.max_iter"],
                                  tol=cfg["picard.tol"], g_min=cfg["g_min"])
            row.update(e0=e0, energy=rep.energy.e_total, iterations=rep.iterations,
                       kappa_max=max(rep.kappa_estimates, default=0.0))
            row["ok"] = rep.converged and all(k < 1 for k in rep.kappa_estimates)
    except SolitonLabError as exc:
        row.update(ok=False, failure=f"{type(exc).__name__}: {exc}")
    return row


def run_sweep(cfg, out):
    values = cfg["sweep.values"]
    if not values:
        raise ValueError("sweep.values is empty")
    param, task = cfg["sweep.param"], cfg["sweep.task"]
    cells = []
    for v in values:
        c = dict(cfg)
        c[param] = KEYS[param][1](v)
        validate(c)
        cells.append(c)
    dirs = [str(out / f"cell_{i:03d}") for i in range(len(cells))]
    jobs = cfg["jobs"] or os.cpu_count() or 1
    if jobs == 1 or len(cells) == 1:
        rows = [_sweep_cell(task, c, d) for c, d in zip(cells, dirs)]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(cells))) as pool:
            rows = list(pool.map(_sweep_cell, [task] * len(cells), cells, dirs))
    for c, r in zip(cells, rows):
        r[param] = c[param]
    if task == "mms":
        for i in range(1, len(rows)):
            a, b = rows[i - 1], rows[i]
            if "error" in a and "error" in b and a["error"] > 0 and b["error"] > 0:
                ratio = float(cells[i - 1][param]) / float(cells[i][param])
                if param == "grid.n":
                    ratio = 1.0 / ratio
                b["order"] = float(np.log(a["error"] / b["error"]) / np.log(ratio))
    keys = sorted({k for r in rows for k in r} - {"ok", "failure"})
    numeric = {k: [float(r.get(k, np.nan)) for r in rows] for k in keys}
    numeric["ok"] = [float(bool(r.get("ok"))) for r in rows]
    io.write_csv(out / "sweep.csv", numeric, cfg)
    payload = {"task": task, "param": param, "cells": rows,
               "checks": [_check(f"cell_{i}", r.get("ok", False)) for i, r in enumerate(rows)]}
    io.write_json(out / "sweep.json", payload, cfg)
    return payload


COMMANDS = {"soliton": run_soliton, "evolve": run_evolve, "perturb": run_perturb,
            "verify": run_verify, "sweep": run_sweep}


def build_parser():
    ap = argparse.ArgumentParser(prog="soliton-lab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="key = value configuration file")
    ap.add_argument("--out", default="out", help="output directory (default: out)")
    ap.add_argument("--json", action="store_true", help="print the JSON summary to stdout")
    for key, (_, parse) in KEYS.items():
        flags = [f"--{key}"]
        if "_" in key:
            flags.append(f"--{key.replace('_', '-')}")
        extra = {"nargs": "?", "const": "true"} if parse is _bool else {}
        ap.add_argument(*flags, dest=key, default=None, metavar="VALUE", **extra)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    opts = {k: getattr(args, k) for k in KEYS}
    try:
        cfg = resolve_config(opts, args.config)
    except (ValueError, OSError) as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return EXIT_ERROR
    out = Path(args.out)
    started = time.perf_counter()
    try:
        payload = COMMANDS[args.command](cfg, out)
    except CHECK_ERRORS as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "check": True}),
              file=sys.stderr)
        return EXIT_CHECK
    except (SolitonLabError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_ERROR
    ok = all(c["pass"] for c in payload.get("checks", []))
    if args.json:
        summary = {"command": args.command, "ok": ok, "checks": payload.get("checks", []),
                   "elapsed_s": round(time.perf_counter() - started, 3)}
        print(json.dumps(io._plain(summary), indent=2))
    return EXIT_OK if ok else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
