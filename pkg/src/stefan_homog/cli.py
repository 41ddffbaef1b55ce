"""Command line entry point: ``stefan-homog <subcommand> --config PATH --out DIR``.

Each subcommand writes its outputs under ``--out`` and exits 0 only when the
invariants it asserts hold.  Errors print a JSON object to stdout and exit 1.
Wall-clock timings go to ``timings.json`` so every other output is reproducible.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import grid as G
from .cell import build_effective_model
from .config import ConfigError, config_hash, parse_config, with_overrides
from .diagnostics import apriori_check, contraction_test, convergence_study, observed_rates
from .evolution import homogenized_problem, oscillatory_problem, solve_evolution
from .fields import ergodicity_defect, mean_value
from .hypotheses import validate_hypotheses

SUBCOMMANDS = ("validate", "mean", "cell", "psi0", "solve", "converge", "unique")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False,
                               default=_json_default) + "\n", encoding="utf-8")


def write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\r\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


# --------------------------------------------------------------------------
# subcommands; each returns (report, passed)


def run_validate(spec, out: Path, args):
    rep = validate_hypotheses(spec)
    return rep.as_dict(), rep.passed


def _named_fields(spec):
    yield "initial.oscillation", spec.initial.oscillation
    yield "source.oscillation", spec.source.oscillation
    if spec.potential.oscillation is not None:
        yield "potential.oscillation", spec.potential.oscillation
    if spec.flux.kind == "linear":
        K = spec.flux.K
        for i in range(K.dim):
            for j in range(K.dim):
                yield f"flux.K[{i}][{j}]", K.entry(i, j)
    elif spec.flux.psi.kind == "smooth_abs":
        yield "flux.psi.coefficient", spec.flux.psi.coefficient


def run_mean(spec, out: Path, args):
    L = 100.0
    fields, ok = {}, True
    for name, f in _named_fields(spec):
        exact = mean_value(f)
        num = mean_value(f, "numeric", L)
        # each mode's box average is at most 1 / (|k| L) per axis in absolute value
        bound = sum(abs(m.amplitude) / (min(abs(k) for k in m.frequency if k) * L)
                    for m in f.modes)
        good = abs(num - exact) <= bound + 1e-12
        ok &= good
        fields[name] = {"exact": exact, "numeric": num, "L": L, "bound": bound, "within_bound": good,
                        "ergodicity_defect": {str(t): ergodicity_defect(f, t, 1000.0)
                                              for t in (10.0, 100.0, 1000.0)}}
    return {"fields": fields}, ok


def run_cell(spec, out: Path, args):
    model = build_effective_model(spec)
    rep = dict(model.report)
    if model.K0 is None:
        ders = model.psi0_derivs
        ok = bool(np.all(np.diff(ders) >= -1e-8))
        rep["psi0_derivative_monotone"] = ok
        write_rows(out / "psi0_table.csv", ("eta", "psi0", "dpsi0"),
                   zip(model.psi0_etas, model.psi0_values, model.psi0_derivs))
        return rep, ok
    K0 = np.asarray(model.K0)
    ev = np.linalg.eigvalsh(0.5 * (K0 + K0.T))
    sym = float(np.max(np.abs(K0 - K0.T)))
    lo, hi = model.report["reuss"], model.report["voigt"]
    k0, k1 = spec.flux.bounds
    checks = {"symmetric": sym <= 1e-10,
              "within_voigt_reuss": bool(ev.min() >= lo - 1e-8 and ev.max() <= hi + 1e-8),
              "within_ellipticity": bool(ev.min() >= k0 - 1e-8 and ev.max() <= k1 + 1e-8)}
    rep.update(eigenvalues=ev, symmetry_defect=sym, checks=checks)
    corr = model.correctors
    for i, W in enumerate(corr.W):
        f = G.GridField(np.asarray(W).reshape(corr.grid.shape), corr.grid)
        G.write_binary(out / f"corrector_{i}.bin", f)
        G.write_csv(out / f"corrector_{i}.csv", f)
    rep["corrector_residuals"] = list(corr.residuals)
    return rep, all(checks.values())


def run_psi0(spec, out: Path, args):
    if spec.flux.kind != "nonlinear" or spec.dim != 1:
        raise ValueError("psi0 needs a 1-D nonlinear flux config")
    model = build_effective_model(spec)
    etas, vals, ders = model.psi0_etas, model.psi0_values, model.psi0_derivs
    write_rows(out / "psi0_table.csv", ("eta", "psi0", "dpsi0"), zip(etas, vals, ders))
    # convexity of the table and agreement of the flux with the slope of the values
    second = np.diff(vals, 2)
    fd = np.gradient(vals, etas)
    slope_err = float(np.max(np.abs(fd[1:-1] - ders[1:-1])) / (1.0 + np.max(np.abs(ders))))
    h = float(etas[1] - etas[0])
    checks = {"convex": bool(np.all(second >= -1e-8 * (1 + np.abs(vals[1:-1])))),
              "slope_consistent": slope_err <= 10.0 * h * h + 1e-6,
              "nonnegative": bool(np.all(vals >= -1e-10))}
    rep = dict(model.report)
    rep.update(checks=checks, slope_error=slope_err, table=len(etas))
    return rep, all(checks.values())


def _solve_target(spec, args):
    eps = args.eps
    if eps is None or eps == ["homogenized"]:
        model = build_effective_model(spec)
        return homogenized_problem(spec, model, args.grid), None
    e = float(eps[0])
    return oscillatory_problem(spec, e, args.grid), e


def run_solve(spec, out: Path, args):
    P, eps = _solve_target(spec, args)
    traj = solve_evolution(P)
    write_rows(out / "trajectory.csv", ("t", "l2_w", "energy", "nl_iters", "residual"),
               ((r.t, r.l2_w, r.energy, r.nl_iters, r.residual) for r in traj.records))
    g = P.grid
    for name, arr in (("w", traj.w), ("u", traj.temperature())):
        f = G.GridField(traj.full(arr[-1:])[0].reshape(g.shape), g)
        G.write_binary(out / f"{name}_final.bin", f)
        G.write_csv(out / f"{name}_final.csv", f)
    ap = apriori_check(traj, P.tol("apriori_slack", 1e-6))
    gap = max(r.fenchel_gap for r in traj.records)
    checks = {"apriori": ap["passed"], "fenchel": gap <= P.tol("fenchel_gap", 1e-8)}
    rep = {"eps": eps, "N": g.N, "steps": len(traj.records) - 1, "sup_l2_w": traj.sup_l2_w,
           "l2h1_u": traj.l2h1_u, "final_energy": traj.records[-1].energy,
           "bound_constant": traj.bound_constant, "min_bound_slack": ap["min_slack"],
           "gamma": ap["gamma"], "gamma_tilde": ap["gamma_tilde"], "max_fenchel_gap": gap,
           "max_nl_iters": max(r.nl_iters for r in traj.records), "checks": checks}
    return rep, all(checks.values())


def run_converge(spec, out: Path, args):
    if args.eps is not None and args.eps != ["homogenized"]:
        spec = with_overrides(spec, eps=[float(e) for e in args.eps])
    table = convergence_study(spec, jobs=args.jobs)
    (out / "convergence.csv").write_bytes(table.to_csv().encode("utf-8"))
    errs = [r.err_l1 for r in table.rows]
    checks = dict(table.checks)
    rows = [{"eps": r.eps, "N": r.N, "min_bound_slack": r.min_bound_slack,
             "max_fenchel_gap": r.max_fenchel_gap, "l2h1_u": r.l2h1_u} for r in table.rows]
    rep = {"reference": table.reference, "rates": observed_rates(table), "runs": rows,
           "final_over_first": errs[-1] / errs[0] if errs[0] > 0 else None,
           "checks": checks}
    return rep, all(checks.values())


def run_unique(spec, out: Path, args):
    model = build_effective_model(spec)
    base = homogenized_problem(spec, model, args.grid)
    idx = base.grid.interior_index()
    X = base.grid.coords()
    pts = X.reshape(-1, spec.dim)[idx] if spec.dim == 2 else X.ravel()[idx]
    bump = np.prod(np.sin(np.pi * np.atleast_2d(pts.T).T), axis=-1) if spec.dim == 2 \
        else np.sin(np.pi * pts)
    w0 = np.asarray(base.w0).ravel()
    w0 = w0[idx] if w0.size == base.grid.size else w0
    tight = dict(spec.tolerances, newton_tol=min(spec.tol("newton_tol"), 1e-12))
    tspec = replace(spec, tolerances=tight)
    pert = contraction_test(tspec, model, w0, w0 + 0.1 * bump, N=args.grid)
    same = contraction_test(tspec, model, w0, w0, N=args.grid)
    write_rows(out / "contraction.csv", ("t", "E"), zip(pert.times, pert.E))
    checks = {"nonincreasing": pert.nonincreasing, "identical_data_zero": bool(np.all(same.E == 0))}
    rep = {"E0": pert.E[0], "E_final": pert.E[-1], "max_increment": float(np.max(pert.increments)),
           "slack": pert.slack, "checks": checks}
    return rep, all(checks.values())


RUNNERS = {"validate": run_validate, "mean": run_mean, "cell": run_cell, "psi0": run_psi0,
           "solve": run_solve, "converge": run_converge, "unique": run_unique}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stefan-homog",
                                description="Homogenization experiments for Stefan-type problems.")
    sub = p.add_subparsers(dest="command", required=True, metavar="subcommand")
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="problem spec (JSON)")
        s.add_argument("--out", default="out", help="output directory")
        s.add_argument("--eps", nargs="+", default=None,
                       help="eps values, or 'homogenized' for the effective problem")
        s.add_argument("--grid", type=int, default=None, help="override the grid size N")
        s.add_argument("--jobs", type=int, default=1, help="parallel eps runs (converge)")
    return p


def _fail(out: Path | None, payload: dict) -> int:
    payload = {"status": "error", **payload}
    text = json.dumps(payload, sort_keys=True, default=_json_default)
    print(text)
    if out is not None and out.is_dir():
        (out / "error.json").write_text(text + "\n", encoding="utf-8")
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        if args.eps is not None and args.eps != ["homogenized"]:
            for e in args.eps:
                if not (math.isfinite(float(e)) and float(e) > 0):
                    raise ValueError(f"eps must be positive, got {e}")
        spec = parse_config(args.config)
    except ConfigError as exc:
        return _fail(None, {"command": args.command,
                            "errors": [{"line": ln, "message": m} for ln, m in exc.errors]})
    except (OSError, ValueError) as exc:
        return _fail(None, {"command": args.command, "errors": [{"message": str(exc)}]})
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        rep, ok = RUNNERS[args.command](spec, out, args)
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        return _fail(out, {"command": args.command, "config_hash": config_hash(spec),
                           "errors": [{"message": str(exc), "type": type(exc).__name__}]})
    report = {"command": args.command, "config": spec.name, "config_hash": config_hash(spec),
              "passed": bool(ok), "report": rep}
    write_json(out / f"{args.command}.json", report)
    write_json(out / "timings.json", {"command": args.command,
                                      "seconds": round(time.perf_counter() - t0, 3)})
    print(json.dumps({"command": args.command, "passed": bool(ok), "out": str(out)}, sort_keys=True))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
