"""Implicit enthalpy scheme for w_t - div a(x/eps, u, grad u) = f,  w in dPsi(x/eps, u).

Each backward-Euler step solves for the interior enthalpy w with u = beta(w):

    F(w) = w - w_prev - dt f(u_prev) + dt A(beta(w)) = 0,

by semismooth Newton with a residual line search.  When the line search stalls
the step falls back to damped enthalpy relaxation, where each sweep solves the
linearized elliptic problem (kappa I + dt A') du = -F(w) and moves w by kappa du,
kappa being the inverse Lipschitz constant of beta.  Steps that still fail are
retried with halved time steps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import PchipInterpolator

from . import grid as G
from .convex import ConvexPotential, KirchhoffMap
from .fields import Constitutive, MatrixField, OscillatoryField


# --------------------------------------------------------------------------
# fluxes: discrete -div a(u, grad u) on all nodes


class LinearFlux:
    """-div(K grad u) with K sampled on faces."""

    def __init__(self, grid: G.DomainGrid, coeff):
        self.grid = grid
        self.A = G.flux_operator(grid, coeff)
        self.L = G.flux_operator(grid, 1.0)

    def apply(self, u):
        return self.A @ u

    def jacobian(self, u):
        return self.A

    def grad_energy(self, u) -> float:
        """Discrete int |grad u|^2 matching the flux's own energy."""
        return float(self.grid.h ** self.grid.dim * (u @ (self.L @ u)))


class ModulatedFlux:
    """-div(h(u) K grad u) with h evaluated at the face average of u."""

    def __init__(self, grid: G.DomainGrid, coeff, h: Constitutive):
        self.grid = grid
        self.h = h
        self.terms = [(G.face_component(grid, d, a), w, G.face_component(grid, d, b),
                       G.face_average(grid, d))
                      for d, a, b, w in G.energy_terms(grid, coeff)]
        self.L = G.flux_operator(grid, 1.0)

    def apply(self, u):
        out = np.zeros(self.grid.size)
        for Ca, w, Cb, Av in self.terms:
            out += Ca.T @ (w * self.h(Av @ u) * (Cb @ u))
        return out

    def jacobian(self, u):
        J = sp.csr_matrix((self.grid.size, self.grid.size))
        for Ca, w, Cb, Av in self.terms:
            ub = Av @ u
            J = J + Ca.T @ sp.diags(w * self.h(ub)) @ Cb
            J = J + Ca.T @ sp.diags(w * self.h.derivative(ub) * (Cb @ u)) @ Av
        return sp.csr_matrix(J)

    def grad_energy(self, u) -> float:
        return float(self.grid.h ** self.grid.dim * (u @ (self.L @ u)))


class GradientFlux:
    """-div grad_eta psi(z, grad u) on the face energy 1/n sum_d |grad_{F_d} u|."""

    def __init__(self, grid: G.DomainGrid, psi, scale: float = 1.0):
        self.grid = grid
        self.psi = psi
        self.ops = [G.face_gradient(grid, d) for d in range(grid.dim)]
        self.avg = [G.face_average(grid, d) for d in range(grid.dim)]
        self.coef = []
        for d in range(grid.dim):
            pts = grid.face_coords(d)
            pts = pts.reshape(-1, grid.dim) if grid.dim == 2 else pts.reshape(-1)
            self.coef.append(psi.sample(pts / scale))

    def _grads(self, u, d):
        return np.stack([op @ u for op in self.ops[d]], axis=-1)

    def _mod(self, u, d):
        if self.psi.modulation is None:
            return 1.0, 0.0
        ub = self.avg[d] @ u
        return self.psi.modulation(ub), self.psi.modulation.derivative(ub)

    def apply(self, u):
        out = np.zeros(self.grid.size)
        for d, ops in enumerate(self.ops):
            s, _ = self._mod(u, d)
            q = self.psi.gradient(self.coef[d], self._grads(u, d)) * np.reshape(s, (-1, 1))
            for e, op in enumerate(ops):
                out += op.T @ q[:, e]
        return out / self.grid.dim

    def jacobian(self, u):
        J = sp.csr_matrix((self.grid.size, self.grid.size))
        for d, ops in enumerate(self.ops):
            g = self._grads(u, d)
            s, ds = self._mod(u, d)
            Hs = self.psi.hessian(self.coef[d], g)
            q = self.psi.gradient(self.coef[d], g)
            for e, ope in enumerate(ops):
                for f, opf in enumerate(ops):
                    J = J + ope.T @ sp.diags(Hs[:, e, f] * s) @ opf
                if self.psi.modulation is not None:
                    J = J + ope.T @ sp.diags(q[:, e] * ds) @ self.avg[d]
        return sp.csr_matrix(J / self.grid.dim)

    def grad_energy(self, u) -> float:
        hn = self.grid.h ** self.grid.dim
        return float(hn * sum(np.sum(self._grads(u, d) ** 2) for d in range(self.grid.dim))
                     / self.grid.dim)


class TableFlux:
    """1-D homogenized flux q(grad u) from a monotone interpolant of psi0'."""

    def __init__(self, grid: G.DomainGrid, etas, derivs, modulation: Constitutive | None = None):
        if grid.dim != 1:
            raise ValueError("tabulated flux is 1-D only")
        self.grid = grid
        self.q = PchipInterpolator(etas, derivs, extrapolate=True)
        self.dq = self.q.derivative()
        self.D = G.face_difference(grid, 0)
        self.Av = G.face_average(grid, 0)
        self.modulation = modulation
        self.L = G.flux_operator(grid, 1.0)

    def _mod(self, u):
        if self.modulation is None:
            return 1.0, 0.0
        ub = self.Av @ u
        return self.modulation(ub), self.modulation.derivative(ub)

    def apply(self, u):
        s, _ = self._mod(u)
        return self.D.T @ (s * self.q(self.D @ u))

    def jacobian(self, u):
        s, ds = self._mod(u)
        eta = self.D @ u
        J = self.D.T @ sp.diags(s * self.dq(eta)) @ self.D
        if self.modulation is not None:
            J = J + self.D.T @ sp.diags(ds * self.q(eta)) @ self.Av
        return sp.csr_matrix(J)

    def grad_energy(self, u) -> float:
        return float(self.grid.h * (u @ (self.L @ u)))


# --------------------------------------------------------------------------
# problem and state


@dataclass
class EvolutionProblem:
    grid: G.DomainGrid
    potential: ConvexPotential
    flux: object
    w0: np.ndarray                   # full nodal initial enthalpy
    T: float
    dt: float
    multiplier: np.ndarray | float = 1.0    # potential multiplier g(x/eps) at interior nodes
    source: object = None            # callable u_interior -> f at interior nodes, or None
    eps: float | None = None
    c_alpha: float = 1.0
    h_alpha: float = 0.0
    c_f: float = 0.0
    h_f: float = 0.0
    sigma: float = 0.0
    tolerances: dict = field(default_factory=dict)
    output_map: object = None        # optional u -> physical temperature (Kirchhoff inverse)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")

    def tol(self, key, default):
        return self.tolerances.get(key, default)

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class StepRecord:
    t: float
    l2_w: float
    energy: float
    nl_iters: int
    residual: float
    fenchel_gap: float
    grad_sq: float
    dissipation: float
    mass: float
    bound: float
    dt_used: float


@dataclass
class EvolutionState:
    n: int
    t: float
    w: np.ndarray      # interior enthalpy
    u: np.ndarray      # interior unknown of the scheme (temperature, or V in Kirchhoff form)
    records: list[StepRecord] = field(default_factory=list)


@dataclass
class Trajectory:
    problem: EvolutionProblem
    times: np.ndarray
    w: np.ndarray       # (steps+1, interior)
    u: np.ndarray
    records: list[StepRecord]
    bound_constant: float

    def full(self, arr: np.ndarray, fill: float = 0.0) -> np.ndarray:
        """Interior arrays padded to full nodal arrays with boundary value ``fill``."""
        g = self.problem.grid
        out = np.full((arr.shape[0], g.size), fill)
        out[:, g.interior_index()] = arr
        return out

    def temperature(self) -> np.ndarray:
        """Physical u at interior nodes for every time level."""
        if self.problem.output_map is None:
            return self.u
        return np.asarray(self.problem.output_map(self.u))

    @property
    def sup_l2_w(self) -> float:
        return max(r.l2_w for r in self.records)

    @property
    def l2h1_u(self) -> float:
        return math.sqrt(self.records[-1].dissipation)


class StepFailure(G.ConvergenceError):
    """Nonlinear solve failed at a given time."""

    def __init__(self, message, residual, iterations, t):
        super().__init__(message, residual, iterations)
        self.t = t


# --------------------------------------------------------------------------
# the step


class _Stepper:
    def __init__(self, P: EvolutionProblem):
        self.P = P
        g = P.grid
        self.idx = g.interior_index()
        self.hn = g.h ** g.dim
        self.g = np.broadcast_to(np.asarray(P.multiplier, dtype=float), (self.idx.size,))
        gmin = float(np.min(self.g))
        lip = self._beta_lipschitz() / gmin
        self.kappa = 1.0 / lip
        self.tol = P.tol("newton_tol", 1e-8)
        self.max_it = int(P.tol("max_nl_iter", 500))
        self.omega = float(P.tol("relaxation", 1.0))
        self.free_steps = int(P.tol("newton_free_steps", 20))

    def _beta_lipschitz(self) -> float:
        pot = self.P.potential
        if pot.kind == "quadratic":
            return 1.0 / pot.a
        if pot.kind == "stefan":
            return 1.0
        if pot.kind == "tabulated":
            return 1.0 / pot.curvature if pot.curvature > 0 else 1.0
        # Kirchhoff: d/dw H(beta_base(w)) = h(beta_base) beta_base'; bounded on the data range
        return 1.0

    def full(self, ui):
        out = np.zeros(self.P.grid.size)
        out[self.idx] = ui
        return out

    def beta(self, w):
        return np.asarray(self.P.potential.beta(w, self.g), dtype=float)

    def residual(self, w, rhs, dt):
        u = self.beta(w)
        return w - rhs + dt * self.P.flux.apply(self.full(u))[self.idx], u

    def jac_A(self, u):
        J = self.P.flux.jacobian(self.full(u))
        return sp.csr_matrix(J[self.idx][:, self.idx])

    def solve(self, w_prev, rhs, dt):
        """Return (w, u, iterations, residual) or raise StepFailure."""
        P = self.P
        scale = 1.0 + float(np.max(np.abs(w_prev))) if w_prev.size else 1.0
        w = w_prev.copy()
        F, u = self.residual(w, rhs, dt)
        res = float(np.max(np.abs(F))) if F.size else 0.0
        # the residual cannot be resolved below the rounding error of its own terms
        size = np.abs(w) + np.abs(rhs) + dt * (abs(self.jac_A(u)) @ np.abs(u))
        floor = 64.0 * np.finfo(float).eps * float(np.max(size)) if w.size else 0.0
        target = max(self.tol * scale, floor)
        it = 0
        eye = sp.identity(w.size, format="csr")
        newton = True
        while res > target:
            if it >= self.max_it:
                raise StepFailure(f"nonlinear iteration cap {self.max_it} reached "
                                  f"(residual {res:.3e})", res, it, 0.0)
            it += 1
            JA = self.jac_A(u)
            if newton:
                slope = np.asarray(P.potential.beta_slope(w, self.g), dtype=float)
                J = (eye + dt * JA @ sp.diags(slope)).tocsc()
                try:
                    delta = spla.spsolve(J, -F)
                except RuntimeError:
                    delta = None
                accepted = False
                if delta is not None and np.all(np.isfinite(delta)):
                    lam = 1.0
                    for _ in range(30):
                        Fn, un = self.residual(w + lam * delta, rhs, dt)
                        rn = float(np.max(np.abs(Fn)))
                        # semismooth steps across the phase-change kink need not
                        # decrease the residual; full steps are taken unconditionally
                        # for the first few iterations
                        if rn <= (1.0 - 1e-4 * lam) * res or (lam == 1.0 and it <= self.free_steps):
                            w, F, u, res = w + lam * delta, Fn, un, rn
                            accepted = True
                            break
                        lam *= 0.5
                if accepted:
                    continue
                newton = False
            M = (self.kappa * eye + dt * JA).tocsc()
            du = spla.spsolve(M, -F)
            w = w + self.omega * self.kappa * du
            F, u = self.residual(w, rhs, dt)
            res = float(np.max(np.abs(F)))
            newton = True
        return w, u, it, res


def _source_values(P: EvolutionProblem, u_interior):
    if P.source is None:
        return 0.0
    return np.asarray(P.source(u_interior), dtype=float)


def step_implicit(P: EvolutionProblem, S: EvolutionState, dt: float | None = None,
                  stepper: _Stepper | None = None) -> EvolutionState:
    """One backward-Euler step with the source lagged at the previous state."""
    dt = P.dt if dt is None else dt
    st = stepper or _Stepper(P)
    rhs = S.w + dt * _source_values(P, S.u)
    w, u, its, res = st.solve(S.w, rhs, dt)
    rec = StepRecord(S.t + dt, 0.0, 0.0, its, res, 0.0, 0.0, 0.0, 0.0, 0.0, dt)
    return EvolutionState(S.n + 1, S.t + dt, w, u, S.records + [rec])


def _step_with_halving(P, S, st, dt, level, max_levels):
    try:
        return [step_implicit(P, S, dt, st)]
    except StepFailure as exc:
        if level >= max_levels:
            raise StepFailure(f"step failed at t={S.t:.6g} after {level} halvings: {exc}",
                              exc.residual, exc.iterations, S.t) from exc
    first = _step_with_halving(P, S, st, 0.5 * dt, level + 1, max_levels)
    second = _step_with_halving(P, first[-1], st, 0.5 * dt, level + 1, max_levels)
    return first + second


def fenchel_gap(P: EvolutionProblem, w, u, g) -> np.ndarray:
    """Psi(u) + Psi*(w) - u w, relative to 1 + u^2 + w^2."""
    pot = P.potential
    gap = np.asarray(pot.value(u, g)) + np.asarray(pot.conjugate(w, g)) - u * w
    return np.abs(gap) / (1.0 + u * u + w * w)


def bound_constant(P: EvolutionProblem, w0_interior, g) -> float:
    """C in  |w(t)|^2 + int int |grad u|^2 <= C (1 + sum dt int |u|^{1+sigma})."""
    gam, gam_t = P.potential.coercivity_of_conjugate()
    hn = P.grid.h ** P.grid.dim
    psi_star0 = float(hn * np.sum(P.potential.conjugate(w0_interior, g)))
    lead = psi_star0 - min(gam_t, 0.0) + (abs(P.h_alpha) + abs(P.h_f)) * P.T
    return max(lead, P.c_f + abs(P.h_f)) / min(gam, P.c_alpha)


def solve_evolution(P: EvolutionProblem) -> Trajectory:
    """March to T; every step records energy, bound and inclusion diagnostics."""
    g = P.grid
    idx = g.interior_index()
    hn = g.h ** g.dim
    st = _Stepper(P)
    w = np.asarray(P.w0, dtype=float).ravel()
    w = w[idx] if w.size == g.size else w
    u = st.beta(w)
    gmul = st.g
    C = bound_constant(P, w, gmul)
    sig = P.sigma
    u_power = lambda uu: float(hn * np.sum(np.abs(_physical(P, uu)) ** (1.0 + sig)))
    S = EvolutionState(0, 0.0, w, u)
    times, ws, us = [0.0], [w], [u]
    dissipation = 0.0
    upow_sum = 0.0
    l2 = math.sqrt(hn * float(w @ w))
    gap0 = float(np.max(fenchel_gap(P, w, u, gmul))) if w.size else 0.0
    records = [StepRecord(0.0, l2, l2 * l2, 0, 0.0, gap0, st.P.flux.grad_energy(st.full(u)),
                          0.0, hn * float(w.sum()), C, 0.0)]
    upow_prev = u_power(u)
    max_levels = int(P.tol("max_halvings", 5))
    for n in range(P.steps):
        subs = _step_with_halving(P, S, st, P.dt, 0, max_levels)
        its = sum(s.records[-1].nl_iters for s in subs)
        res = max(s.records[-1].residual for s in subs)
        prev = S
        for s in subs:
            dt_s = s.records[-1].dt_used
            gsq = P.flux.grad_energy(st.full(s.u))
            dissipation += dt_s * gsq
            # the lagged source couples u^k and u^{k+1}; both enter the bound's sum
            upow_new = u_power(s.u)
            upow_sum += dt_s * (upow_prev + upow_new)
            upow_prev = upow_new
            prev = s
        S = EvolutionState(n + 1, prev.t, prev.w, prev.u)
        l2 = math.sqrt(hn * float(S.w @ S.w))
        gap = float(np.max(fenchel_gap(P, S.w, S.u, gmul))) if S.w.size else 0.0
        energy = l2 * l2 + dissipation
        bound = C * (1.0 + upow_sum)
        records.append(StepRecord(S.t, l2, energy, its, res, gap, gsq, dissipation,
                                  hn * float(S.w.sum()), bound, P.dt))
        times.append(S.t)
        ws.append(S.w)
        us.append(S.u)
    return Trajectory(P, np.array(times), np.array(ws), np.array(us), records, C)


def _physical(P: EvolutionProblem, u):
    return u if P.output_map is None else P.output_map(u)


# --------------------------------------------------------------------------
# building problems from a spec


def _node_points(grid: G.DomainGrid):
    X = grid.coords()
    idx = grid.interior_index()
    return X.reshape(-1, grid.dim)[idx] if grid.dim == 2 else X.ravel()[idx]


def _face_coeff(grid: G.DomainGrid, K: MatrixField, eps: float | None):
    if eps is None:
        return G.matrix_on_faces(grid, np.asarray(K))
    return G.matrix_on_faces(grid, K, eps)


def _source_fn(field: OscillatoryField, F: Constitutive | None, h_f: float, z):
    amp = np.asarray(field(z), dtype=float) if not field.is_constant else field.constant
    if F is None or (np.isscalar(amp) and amp == 0.0):
        return None if h_f == 0.0 else (lambda u: np.full(np.shape(u), h_f))
    return lambda u: amp * F(u) + h_f


def oscillatory_problem(spec, eps: float, N: int | None = None) -> EvolutionProblem:
    """The eps-problem on the grid N(eps) with all coefficients sampled at x / eps."""
    N = N or spec.domain.grid_size(eps)
    grid = G.DomainGrid(spec.dim, N)
    pts = _node_points(grid)
    z = pts / eps
    flux = _make_flux(spec, grid, eps)
    pot = spec.potential
    g = pot.multiplier(z) if pot.oscillation is not None else 1.0
    w0 = np.asarray(spec.initial.oscillation(z)) * np.asarray(spec.initial.profile(pts))
    return _assemble(spec, grid, pot, flux, w0, g, _source_fn(spec.source.oscillation,
                                                              spec.source.nonlinearity,
                                                              spec.source.h_f, z), eps)


def homogenized_problem(spec, model, N: int | None = None) -> EvolutionProblem:
    N = N or spec.domain.N_ref or spec.domain.N
    grid = G.DomainGrid(spec.dim, N)
    pts = _node_points(grid)
    if model.K0 is not None:
        coeff = model.K0
        flux = LinearFlux(grid, coeff) if model.modulation is None else \
            ModulatedFlux(grid, coeff, model.modulation)
    else:
        flux = TableFlux(grid, model.psi0_etas, model.psi0_derivs, model.psi.modulation)
    pot = model.potential
    g = 1.0 if pot.oscillation is None else pot.oscillation.constant
    w0 = model.initial(pts)
    src = None
    if model.source_nonlinearity is not None and model.source_mean != 0.0 or model.source_shift:
        src = model.source
    return _assemble(spec, grid, pot, flux, w0, g, src, None)


def _make_flux(spec, grid, eps):
    fl = spec.flux
    if fl.kind == "linear":
        coeff = _face_coeff(grid, fl.K, eps)
        if fl.K.modulation is None:
            return LinearFlux(grid, coeff)
        return ModulatedFlux(grid, coeff, fl.K.modulation)
    return GradientFlux(grid, fl.psi, eps)


def _assemble(spec, grid, pot, flux, w0, g, src, eps) -> EvolutionProblem:
    c_f, sigma = spec.source.growth()
    return EvolutionProblem(
        grid=grid, potential=pot, flux=flux, w0=np.asarray(w0, dtype=float), T=spec.domain.T,
        dt=spec.domain.dt, multiplier=g, source=src, eps=eps, c_alpha=spec.flux.coercivity,
        h_alpha=spec.flux.h_alpha, c_f=c_f, h_f=spec.source.h_f, sigma=sigma,
        tolerances=dict(spec.tolerances))


def kirchhoff_problem(P: EvolutionProblem, K, h: Constitutive, eps: float | None) -> EvolutionProblem:
    """Rewrite -div(h(u) K grad u) as -div(K grad V), V = H(u), w in dPsi~(V)."""
    grid = P.grid
    coeff = _face_coeff(grid, K, eps) if isinstance(K, MatrixField) else K
    base = P.potential
    if base.kind not in ("quadratic", "stefan"):
        raise ValueError("Kirchhoff form needs a quadratic or Stefan potential")
    osc = base.oscillation
    plain = replace(base, oscillation=None, constants={})
    tilde = ConvexPotential("kirchhoff", h=h, base=plain, oscillation=osc)
    Hmap = KirchhoffMap(h)
    src = P.source
    if src is not None:
        src_inner = src
        src = lambda V: src_inner(Hmap.inverse(V))
    return replace(P, potential=tilde, flux=LinearFlux(grid, coeff), source=src,
                   output_map=Hmap.inverse)


def solve_linear_kirchhoff(P: EvolutionProblem, K, h: Constitutive,
                           eps: float | None = None) -> tuple[Trajectory, np.ndarray, np.ndarray]:
    """Evolve the Kirchhoff-transformed problem; returns (trajectory, V, u)."""
    traj = solve_evolution(kirchhoff_problem(P, K, h, eps))
    V = traj.u
    return traj, V, np.asarray(KirchhoffMap(h).inverse(V))
