"""Convergence diagnostics: two-scale pairings, weak and strong error measures,
the eps-sweep table, the a-priori energy check and the H^-1 contraction test."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import grid as G
from .cell import EffectiveModel, build_effective_model
from .evolution import (EvolutionProblem, LinearFlux, Trajectory, homogenized_problem,
                        kirchhoff_problem, oscillatory_problem, solve_evolution)
from .fields import OscillatoryField

TABLE_HEADER = ("eps", "err_l1", "err_l15", "weak_gap", "sup_l2_w", "energy")


def two_scale_pairing(grid: G.DomainGrid, v, eps: float, phi: OscillatoryField, psi_x=None) -> float:
    """Quadrature of v(x) phi(x / eps) psi(x) over the domain."""
    X = grid.coords()
    vals = v.values if isinstance(v, G.GridField) else np.asarray(v, dtype=float)
    ps = 1.0 if psi_x is None else np.asarray(psi_x(X), dtype=float)
    return float(np.sum(grid.weights() * vals * np.asarray(phi(X / eps)) * ps))


def pairing_sequence(vs, grids, eps_list, phi, psi_x=None) -> list[float]:
    return [two_scale_pairing(g, v, e, phi, psi_x) for v, g, e in zip(vs, grids, eps_list)]


# --------------------------------------------------------------------------
# space-time measures


def weak_test_family(modes: int = 4, powers: int = 3):
    """sin(k pi x) (t / T)^j in 1-D; in 2-D the sine is a product over the axes."""
    fam = []
    for k in range(1, modes + 1):
        for j in range(powers):
            def fn(x, t, T, k=k, j=j):
                x = np.asarray(x, dtype=float)
                s = np.sin(k * np.pi * x)
                if s.ndim >= 2 and s.shape[-1] == 2:
                    s = s[..., 0] * s[..., 1]
                return s * (t / T) ** j
            fn.label = f"sin({k}pi x) (t/T)^{j}"
            fam.append(fn)
    return fam


def _interior_points(grid: G.DomainGrid):
    X = grid.coords()
    idx = grid.interior_index()
    return X.reshape(-1, grid.dim)[idx] if grid.dim == 2 else X.ravel()[idx]


def weak_gap(grid: G.DomainGrid, times, w_eps, w_hom, tests, T: float) -> float:
    """max over tests of |sum_n dt sum_x (w_eps - w_hom) phi| (right-endpoint rule in t)."""
    diff = np.asarray(w_eps) - np.asarray(w_hom)
    if not np.any(diff):
        return 0.0
    pts = _interior_points(grid)
    hn = grid.h ** grid.dim
    dts = np.diff(times)
    best = 0.0
    for phi in tests:
        total = sum(dt * hn * float(np.sum(diff[n + 1] * phi(pts, times[n + 1], T)))
                    for n, dt in enumerate(dts))
        best = max(best, abs(total))
    return best


def spacetime_lp(grid: G.DomainGrid, times, err, p: float) -> float:
    hn = grid.h ** grid.dim
    dts = np.diff(times)
    total = sum(dt * hn * float(np.sum(np.abs(err[n + 1]) ** p)) for n, dt in enumerate(dts))
    return total ** (1.0 / p)


def restrict(ref_grid: G.DomainGrid, values: np.ndarray, grid: G.DomainGrid) -> np.ndarray:
    """Interior values of a reference run (per time level) on a coarser grid."""
    full = np.zeros((values.shape[0], ref_grid.size))
    full[:, ref_grid.interior_index()] = values
    full = full.reshape((values.shape[0],) + ref_grid.shape)
    if ref_grid.N % grid.N == 0:
        s = ref_grid.N // grid.N
        sl = (slice(None),) + (slice(None, None, s),) * grid.dim
        out = full[sl].reshape(values.shape[0], -1)
    else:
        xr = ref_grid.axis_coords()
        pts = grid.coords().reshape(-1, grid.dim) if grid.dim == 2 else grid.coords()
        out = np.stack([RegularGridInterpolator((xr,) * grid.dim, f)(pts) if grid.dim == 2
                        else np.interp(pts, xr, f) for f in full])
    return out[:, grid.interior_index()]


# --------------------------------------------------------------------------
# convergence study


@dataclass
class ConvergenceRow:
    eps: float
    err_l1: float
    err_l15: float
    weak_gap: float
    sup_l2_w: float
    energy: float
    N: int = 0
    min_bound_slack: float = 0.0
    max_fenchel_gap: float = 0.0
    l2h1_u: float = 0.0

    def as_tuple(self):
        return (self.eps, self.err_l1, self.err_l15, self.weak_gap, self.sup_l2_w, self.energy)


@dataclass
class ConvergenceTable:
    rows: list[ConvergenceRow]
    reference: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\r\n")
        wr.writerow(TABLE_HEADER)
        for r in self.rows:
            wr.writerow([repr(float(v)) for v in r.as_tuple()])
        return buf.getvalue()

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def _run_eps(spec, eps: float, tests, ref):
    P = oscillatory_problem(spec, eps)
    tr = solve_evolution(P)
    grid = P.grid
    ref_grid, ref_traj = ref
    if not np.allclose(tr.times, ref_traj.times):
        raise ValueError("reference and eps runs must share the time partition")
    u_ref = restrict(ref_grid, ref_traj.temperature(), grid)
    w_ref = restrict(ref_grid, ref_traj.w, grid)
    err = tr.temperature() - u_ref
    recs = tr.records
    return ConvergenceRow(
        eps=eps, err_l1=spacetime_lp(grid, tr.times, err, 1.0),
        err_l15=spacetime_lp(grid, tr.times, err, 1.5),
        weak_gap=weak_gap(grid, tr.times, tr.w, w_ref, tests, P.T),
        sup_l2_w=tr.sup_l2_w, energy=recs[-1].energy, N=grid.N,
        min_bound_slack=min(r.bound - r.energy for r in recs),
        max_fenchel_gap=max(r.fenchel_gap for r in recs), l2h1_u=tr.l2h1_u)


def convergence_study(spec, eps_list=None, model: EffectiveModel | None = None,
                      jobs: int = 1) -> ConvergenceTable:
    """Run the eps-problems and the homogenized reference; fill the table.

    Rows are sorted by decreasing eps whatever the execution order.
    """
    eps_list = sorted(eps_list or spec.eps, reverse=True)
    if not eps_list:
        raise ValueError("no eps values: give them in the config or with --eps")
    for e in eps_list:
        N = spec.domain.grid_size(e)
        if N * e < 8 - 1e-9:
            raise ValueError(f"grid N={N} does not resolve eps={e}: need N >= 8/eps")
    model = model or build_effective_model(spec)
    Pref = homogenized_problem(spec, model, spec.domain.N_ref or spec.domain.grid_size(min(eps_list)))
    ref_traj = solve_evolution(Pref)
    tests = weak_test_family(spec.weak_tests.modes, spec.weak_tests.powers)

    def work(e):
        try:
            return _run_eps(spec, e, tests, (Pref.grid, ref_traj))
        except Exception as exc:
            raise RuntimeError(f"run at eps={e} failed: {exc}") from exc

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(work, eps_list))
    else:
        rows = [work(e) for e in eps_list]
    rows.sort(key=lambda r: -r.eps)
    slack = spec.tol("l1_slack")
    errs = [r.err_l1 for r in rows]
    T = spec.domain.T
    checks = {
        "finite": all(np.isfinite(v) and v >= 0 for r in rows for v in r.as_tuple()),
        "l1_nonincreasing": all(b <= (1.0 + slack) * a for a, b in zip(errs, errs[1:])),
        "holder_p_columns": all(r.err_l1 <= T ** (1.0 / 3.0) * r.err_l15 * (1 + 1e-12) + 1e-300
                                for r in rows),
    }
    ref = {"N": Pref.grid.N, "K0": None if model.K0 is None else np.asarray(model.K0).tolist(),
           "sup_l2_w": ref_traj.sup_l2_w, "energy": ref_traj.records[-1].energy}
    return ConvergenceTable(rows, ref, checks)


# --------------------------------------------------------------------------
# a-priori bound and contraction


def apriori_check(traj: Trajectory, slack_tol: float = 1e-6) -> dict:
    """Both sides of the energy inequality per step, plus the conjugate coercivity."""
    P = traj.problem
    gam, gam_t = P.potential.coercivity_of_conjugate()
    hn = P.grid.h ** P.grid.dim
    g = np.broadcast_to(np.asarray(P.multiplier, dtype=float), traj.w.shape[1:])
    slack = [r.bound - r.energy for r in traj.records]
    coerc = []
    for w in traj.w:
        lhs = float(hn * np.sum(P.potential.conjugate(w, g)))
        coerc.append(lhs - (gam * hn * float(w @ w) + gam_t))
    return {"gamma": gam, "gamma_tilde": gam_t, "C": traj.bound_constant,
            "min_slack": min(slack), "slack": slack,
            "min_coercivity_slack": min(coerc),
            "passed": min(slack) >= -slack_tol and min(coerc) >= -slack_tol}


@dataclass
class ContractionResult:
    times: np.ndarray
    E: np.ndarray
    increments: np.ndarray
    nonincreasing: bool
    slack: float


def contraction_test(spec, model: EffectiveModel, w0_a, w0_b, T: float | None = None,
                     dt: float | None = None, N: int | None = None,
                     slack: float | None = None) -> ContractionResult:
    """E(t) = <w_a - w_b, A^-1 (w_a - w_b)> for the homogenized linear problem.

    A is assembled from the effective tensor; a u-modulated flux is first put in
    Kirchhoff form so the operator is linear in the transformed unknown.
    """
    if model.K0 is None:
        raise ValueError("contraction test needs the linear (tensor) homogenized model")
    from dataclasses import replace
    base = homogenized_problem(spec, model, N)
    base = replace(base, T=T or base.T, dt=dt or base.dt)
    if model.modulation is not None:
        base = kirchhoff_problem(base, model.K0, model.modulation, None)
    grid = base.grid
    A = G.interior_operator(grid, LinearFlux(grid, model.K0).A)
    ta = solve_evolution(replace(base, w0=np.asarray(w0_a, dtype=float)))
    tb = solve_evolution(replace(base, w0=np.asarray(w0_b, dtype=float)))
    solve = G.dirichlet_solver(A)
    E = np.array([G.hminus1_norm(grid, wa - wb, A, solve) for wa, wb in zip(ta.w, tb.w)])
    inc = np.diff(E)
    tol = (slack if slack is not None else spec.tol("contraction_slack")) * E[0]
    return ContractionResult(ta.times, E, inc, bool(np.all(inc <= tol)), tol)


def observed_rates(table: ConvergenceTable) -> list[float]:
    """log2 ratios of consecutive L1 errors (reported, never asserted)."""
    out = []
    for a, b in zip(table.rows, table.rows[1:]):
        out.append(math.log(a.err_l1 / b.err_l1) / math.log(a.eps / b.eps)
                   if a.err_l1 > 0 and b.err_l1 > 0 else float("nan"))
    return out
