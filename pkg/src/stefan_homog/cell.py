"""Periodic cell problems: correctors, the effective tensor and the homogenized
dissipation potential.

Correctors solve, for each direction i,

    find W_i periodic with zero mean:  a(e_i + grad W_i, grad phi) = 0  for all phi,

with the face energy ``a`` of :func:`grid.energy_terms`; the effective tensor is
``K0_ij = a(e_i + grad W_i, e_j + grad W_j)``.  The homogenized dissipation
potential is the cell minimum of mean psi(z, eta + grad phi) over periodic
potentials phi, found by preconditioned nonlinear conjugate gradients.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable

import numpy as np

from . import grid as G
from .convex import averaged_potential
from .fields import Constitutive, MatrixField, Mode, OscillatoryField, SlowProfile, mean_value


# --------------------------------------------------------------------------
# commensurate (supercell) approximation


@dataclass(frozen=True)
class Rationalization:
    base: float            # angular frequency of one cycle across the unit of the lattice
    period: float          # supercell length
    error: float           # max |k - k_rational| over all frequency components
    denominator: int


def _component_ratios(freqs) -> tuple[float, list[float]]:
    comps = [abs(c) for f in freqs for c in f if c != 0.0]
    if not comps:
        return 2.0 * math.pi, []
    base = min(comps)
    return base, [c / base for c in comps]


def rationalize(freqs, Q: int = 64) -> Rationalization:
    """Approximate all frequency components by rational multiples of the smallest one.

    Each ratio is replaced by its best approximation with denominator <= Q; the
    supercell is the common period of the approximated modes.
    """
    base, ratios = _component_ratios(freqs)
    if not ratios:
        return Rationalization(base, 1.0, 0.0, 1)
    den = 1
    err = 0.0
    for r in ratios:
        fr = Fraction(r).limit_denominator(Q)
        den = math.lcm(den, fr.denominator)
        err = max(err, abs(r - float(fr)) * base)
    return Rationalization(base, 2.0 * math.pi * den / base, err, den)


def _round_frequency(k: float, base: float, Q: int) -> float:
    if k == 0.0:
        return 0.0
    fr = Fraction(abs(k) / base).limit_denominator(Q)
    return math.copysign(base * float(fr), k)


def rationalized_field(fld: OscillatoryField, base: float, Q: int) -> OscillatoryField:
    modes = tuple(Mode(m.amplitude, tuple(_round_frequency(k, base, Q) for k in m.frequency),
                       m.phase, m.waveform) for m in fld.modes)
    return OscillatoryField(fld.constant, modes, fld.dim)


def rationalized_matrix(K: MatrixField, Q: int) -> tuple[MatrixField, Rationalization]:
    rat = rationalize(list(K.frequencies()), Q)
    ent = tuple(tuple(rationalized_field(e, rat.base, Q) for e in row) for row in K.entries)
    return MatrixField(ent, K.modulation), rat


def previous_denominator_bound(K: MatrixField, Q: int) -> int:
    """Largest bound below Q that yields a strictly different rationalization."""
    rat = rationalize(list(K.frequencies()), Q)
    q = rat.denominator
    while q > 1:
        q -= 1
        if rationalize(list(K.frequencies()), q).denominator != rat.denominator:
            return q
    return 1


POINTS_PER_WAVELENGTH = 16


def resolved_size(freqs, M: int, period: float) -> int:
    """M raised, if needed, to 16 points per shortest wavelength across the cell."""
    kmax = max((abs(c) for f in freqs for c in f), default=0.0)
    cycles = kmax * period / (2.0 * math.pi)
    return max(M, POINTS_PER_WAVELENGTH * math.ceil(cycles - 1e-9))


def cell_grid_for(K: MatrixField, M: int, Q: int = 64) -> tuple[G.CellGrid, MatrixField, Rationalization]:
    """Cell grid covering one (super)period of K, with the rationalized field.

    A supercell spans many periods, so M is raised to keep every mode resolved.
    """
    Kr, rat = rationalized_matrix(K, Q)
    M = resolved_size(list(Kr.frequencies()), M, rat.period)
    return G.CellGrid(K.dim, M, rat.period), Kr, rat


# --------------------------------------------------------------------------
# correctors and the effective tensor


@dataclass
class CorrectorSet:
    grid: G.CellGrid
    W: list[np.ndarray]
    residuals: list[float]
    iterations: list[int]
    face_coeff: dict
    modulation: float = 1.0

    @property
    def means(self) -> list[float]:
        return [float(w.mean()) for w in self.W]


def _unit_component(d: int, a: int, i: int) -> float:
    # component a of grad x_i on any face is delta_ai
    return 1.0 if a == i else 0.0


def _face_count(grid: G.Grid, d: int) -> int:
    return int(np.prod(G.face_shape(grid, d)))


def _modulation(K: MatrixField, u) -> float:
    if K.modulation is None or u is None:
        return 1.0
    return float(K.modulation(u))


def solve_corrector(grid: G.CellGrid, K: MatrixField, x=None, t=None, u=None,
                    rtol: float = 1e-10) -> CorrectorSet:
    """Correctors W_i on the cell grid for K frozen at the slow values.

    The u-modulation multiplies K uniformly and therefore leaves the correctors
    unchanged; it is recorded so that the effective tensor picks it up.
    """
    Kf = G.matrix_on_faces(grid, K)
    if not K.is_symmetric:
        raise ValueError("cell problems need a symmetric coefficient matrix")
    terms = G.energy_terms(grid, Kf)
    A = G.flux_operator(grid, Kf)
    scale = float(np.mean([np.mean(Kf[d][:, d, d]) for d in range(grid.dim)]))
    precond = G.fft_laplace_preconditioner(grid, scale)
    Ws, res, its = [], [], []
    for i in range(grid.dim):
        b = np.zeros(grid.size)
        for d, a, bb, w in terms:
            unit = _unit_component(d, bb, i)
            if unit:
                b -= G.face_component(grid, d, a).T @ (w * unit)
        try:
            W, it, r = G.pcg(A, b, precond=precond, project=G.zero_mean, rtol=rtol)
        except G.ConvergenceError as exc:
            raise G.ConvergenceError(
                f"corrector {i} did not converge; the cell grid may not resolve the "
                f"coefficient frequencies", exc.residual, exc.iterations) from exc
        Ws.append(W.reshape(grid.shape))
        res.append(r)
        its.append(it)
    return CorrectorSet(grid, Ws, res, its, Kf, _modulation(K, u))


def _energy(grid: G.CellGrid, terms, left: tuple[int, np.ndarray], right: tuple[int, np.ndarray]) -> float:
    """Mean face energy of (e_i + grad Wi, e_j + grad Wj)."""
    i, Wi = left
    j, Wj = right
    total = 0.0
    for d, a, b, w in terms:
        ga = _unit_component(d, a, i) + G.face_component(grid, d, a) @ Wi.ravel()
        gb = _unit_component(d, b, j) + G.face_component(grid, d, b) @ Wj.ravel()
        total += float(np.sum(ga * w * gb)) / _face_count(grid, d)
    return total


def effective_tensor(grid: G.CellGrid, K: MatrixField, correctors: CorrectorSet) -> np.ndarray:
    terms = G.energy_terms(grid, correctors.face_coeff)
    n = grid.dim
    K0 = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            K0[i, j] = _energy(grid, terms, (i, correctors.W[i]), (j, correctors.W[j]))
    return correctors.modulation * K0


def voigt_reuss_bounds(grid: G.CellGrid, K: MatrixField) -> tuple[float, float]:
    """Harmonic and arithmetic means of the scalar coefficient on the faces."""
    Kf = G.matrix_on_faces(grid, K)
    vals = np.concatenate([Kf[d][:, d, d] for d in range(grid.dim)])
    return float(1.0 / np.mean(1.0 / vals)), float(np.mean(vals))


def homogenize_matrix(K: MatrixField, M: int, Q: int = 64, u=None, rtol: float = 1e-10):
    """Convenience: grid, correctors and K0 in one call."""
    cg, Kr, rat = cell_grid_for(K, M, Q)
    corr = solve_corrector(cg, Kr, u=u, rtol=rtol)
    return effective_tensor(cg, Kr, corr), corr, rat


# --------------------------------------------------------------------------
# dissipation potentials in the gradient variable


@dataclass(frozen=True)
class DissipationPotential:
    """psi(z, v, eta), convex and C^1 in eta.

    ``quadratic``: 1/2 h(v) [K(z) eta] . eta
    ``smooth_abs``: h(v) k(z) [1/2 |eta|^2 + mu (sqrt(1 + |eta|^2) - 1)]
    """

    kind: str
    K: MatrixField | None = None
    coefficient: OscillatoryField | None = None
    mu: float = 0.0
    modulation: Constitutive | None = None

    KINDS = ("quadratic", "smooth_abs")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown dissipation potential {self.kind!r}")
        if self.kind == "quadratic" and self.K is None:
            raise ValueError("quadratic dissipation needs K")
        if self.kind == "smooth_abs":
            if self.coefficient is None:
                raise ValueError("smooth_abs dissipation needs a coefficient field")
            if self.mu < 0:
                raise ValueError("mu must be nonnegative")

    @property
    def dim(self) -> int:
        return self.K.dim if self.kind == "quadratic" else self.coefficient.dim

    def frequencies(self):
        if self.kind == "quadratic":
            return list(self.K.frequencies())
        return [m.frequency for m in self.coefficient.modes]

    def coefficient_bounds(self) -> tuple[float, float]:
        if self.kind == "quadratic":
            lo = min(self.K.entry(i, i).lower_bound() for i in range(self.dim))
            hi = max(self.K.entry(i, i).bound() for i in range(self.dim))
            off = 0.0 if self.dim == 1 else self.K.entry(0, 1).bound()
            return lo - off, hi + off
        return self.coefficient.lower_bound(), self.coefficient.bound() * (1.0 + self.mu)

    def sample(self, pts) -> np.ndarray:
        """Coefficient data at points: (..., n, n) matrices or (...,) scalars."""
        if self.kind == "quadratic":
            return np.asarray(self.K(pts), dtype=float)
        return np.asarray(self.coefficient(pts), dtype=float)

    def _scale(self, v) -> float:
        return 1.0 if self.modulation is None or v is None else float(self.modulation(v))

    def value(self, coef, eta, v=None) -> np.ndarray:
        """eta has shape (..., n)."""
        s = self._scale(v)
        if self.kind == "quadratic":
            return 0.5 * s * np.einsum("...i,...ij,...j->...", eta, coef, eta)
        sq = np.sum(eta * eta, axis=-1)
        return s * coef * (0.5 * sq + self.mu * (np.sqrt(1.0 + sq) - 1.0))

    def gradient(self, coef, eta, v=None) -> np.ndarray:
        s = self._scale(v)
        if self.kind == "quadratic":
            return s * 0.5 * (np.einsum("...ij,...j->...i", coef, eta)
                              + np.einsum("...ji,...j->...i", coef, eta))
        sq = np.sum(eta * eta, axis=-1, keepdims=True)
        return s * coef[..., None] * eta * (1.0 + self.mu / np.sqrt(1.0 + sq))

    def hessian(self, coef, eta, v=None) -> np.ndarray:
        s = self._scale(v)
        n = eta.shape[-1]
        if self.kind == "quadratic":
            return s * 0.5 * (coef + np.swapaxes(coef, -1, -2))
        sq = np.sum(eta * eta, axis=-1)[..., None, None]
        r = np.sqrt(1.0 + sq)
        eye = np.eye(n)
        outer = eta[..., :, None] * eta[..., None, :]
        return s * coef[..., None, None] * (eye * (1.0 + self.mu / r) - self.mu * outer / r ** 3)

    def curvature_scale(self) -> float:
        lo, hi = self.coefficient_bounds()
        return 0.5 * (max(lo, 1e-12) + hi)


def _face_points(grid: G.CellGrid) -> list[np.ndarray]:
    out = []
    for d in range(grid.dim):
        pts = grid.face_coords(d)
        out.append(pts.reshape(-1, grid.dim) if grid.dim == 2 else pts.reshape(-1))
    return out


@dataclass
class Psi0Result:
    value: float
    subgradient: np.ndarray
    phi: np.ndarray
    iterations: int
    gradient_norm: float


class _CellFunctional:
    """J(phi) = 1/n sum_d mean_{F_d} psi(z, eta + grad_{F_d} phi)."""

    def __init__(self, grid: G.CellGrid, psi: DissipationPotential, eta, v=None):
        self.grid = grid
        self.psi = psi
        self.v = v
        self.eta = np.atleast_1d(np.asarray(eta, dtype=float))
        if self.eta.size != grid.dim:
            raise ValueError("eta must have one component per cell dimension")
        self.ops = [G.face_gradient(grid, d) for d in range(grid.dim)]
        self.coef = [psi.sample(p) for p in _face_points(grid)]
        self.nf = [_face_count(grid, d) for d in range(grid.dim)]

    def _grads(self, phi):
        v = phi.ravel()
        return [np.stack([op @ v for op in ops], axis=-1) + self.eta for ops in self.ops]

    def value(self, phi) -> float:
        gs = self._grads(phi)
        return float(sum(np.sum(self.psi.value(c, g, self.v)) / nf
                         for c, g, nf in zip(self.coef, gs, self.nf)) / self.grid.dim)

    def value_and_gradient(self, phi):
        """Value and M^n dJ/dphi (the gradient with respect to the cell mean product)."""
        gs = self._grads(phi)
        val = 0.0
        grad = np.zeros(self.grid.size)
        for c, g, nf, ops in zip(self.coef, gs, self.nf, self.ops):
            val += float(np.sum(self.psi.value(c, g, self.v))) / nf
            q = self.psi.gradient(c, g, self.v)
            for e, op in enumerate(ops):
                grad += (op.T @ q[:, e]) * (self.grid.size / nf)
        return val / self.grid.dim, grad / self.grid.dim

    def flux_mean(self, phi) -> np.ndarray:
        gs = self._grads(phi)
        return sum(self.psi.gradient(c, g, self.v).sum(axis=0) / nf
                   for c, g, nf in zip(self.coef, gs, self.nf)) / self.grid.dim


def minimize_cell_functional(grid: G.CellGrid, psi: DissipationPotential, eta, v=None,
                             gtol: float = 1e-8, maxiter: int = 2000) -> Psi0Result:
    """Preconditioned Polak-Ribiere conjugate gradients with an Armijo safeguard.

    Each line search starts from the secant root of the directional derivative
    (exact for quadratic potentials) and backtracks until sufficient decrease.
    """
    J = _CellFunctional(grid, psi, eta, v)
    prec = G.fft_laplace_preconditioner(grid, psi.curvature_scale() * psi._scale(v))
    rms = lambda g: float(np.sqrt(np.mean(g * g)))
    phi = np.zeros(grid.size)
    f, g = J.value_and_gradient(phi)
    g = G.zero_mean(g)
    s = G.zero_mean(prec(g))
    p = -s
    gs_old = float(g @ s)
    it = 0
    roundoff = 64 * np.finfo(float).eps
    while rms(g) > gtol * (1.0 + abs(f)):
        if it >= maxiter:
            raise G.ConvergenceError(f"cell minimization stalled at gradient {rms(g):.3e}",
                                     rms(g), it)
        it += 1
        d0 = float(g @ p)
        if d0 >= 0:
            p = -s
            d0 = float(g @ p)
        _, g1 = J.value_and_gradient(phi + p)
        d1 = float(G.zero_mean(g1) @ p)
        alpha = d0 / (d0 - d1) if d1 > d0 else 1.0
        if not np.isfinite(alpha) or alpha <= 0:
            alpha = 1.0
        for _ in range(60):
            f_new, g_new = J.value_and_gradient(phi + alpha * p)
            if f_new <= f + 1e-4 * alpha * d0 / grid.size + roundoff * (1.0 + abs(f)):
                break
            alpha *= 0.5
        else:
            raise G.ConvergenceError("line search failed; the potential may not be convex",
                                     rms(g), it)
        phi = G.zero_mean(phi + alpha * p)
        f = f_new
        g_new = G.zero_mean(g_new)
        s_new = G.zero_mean(prec(g_new))
        gs_new = float(g_new @ s_new)
        beta_pr = max(0.0, float(g_new @ (s_new - s)) / gs_old) if gs_old > 0 else 0.0
        p = -s_new + beta_pr * p
        g, s, gs_old = g_new, s_new, gs_new
    return Psi0Result(f, J.flux_mean(phi), phi.reshape(grid.shape), it, rms(g))


def psi0_value(grid: G.CellGrid, psi: DissipationPotential, x=None, t=None, v=None, eta=1.0,
               gtol: float = 1e-8) -> float:
    return minimize_cell_functional(grid, psi, eta, v, gtol).value


def psi0_subgradient(grid: G.CellGrid, psi: DissipationPotential, x=None, t=None, v=None,
                     eta=1.0, gtol: float = 1e-8) -> np.ndarray:
    return minimize_cell_functional(grid, psi, eta, v, gtol).subgradient


def psi0_table(grid: G.CellGrid, psi: DissipationPotential, etas, v=None,
               gtol: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """psi0 and its derivative on a 1-D table of gradient values."""
    vals, ders = [], []
    for e in etas:
        r = minimize_cell_functional(grid, psi, [e], v, gtol)
        vals.append(r.value)
        ders.append(float(r.subgradient[0]))
    return np.array(vals), np.array(ders)


# --------------------------------------------------------------------------
# effective model


class K0Cache:
    """Thread-safe memo of K0(u) keyed by u rounded to a fixed step."""

    def __init__(self, compute: Callable[[float], np.ndarray], step: float = 1e-3):
        self._compute = compute
        self.step = step
        self._store: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    def key(self, u: float) -> int:
        return int(round(u / self.step))

    def __call__(self, u: float) -> np.ndarray:
        k = self.key(u)
        with self._lock:
            hit = self._store.get(k)
        if hit is not None:
            return hit
        # evaluate at the quantized point so the result never depends on call order
        val = np.asarray(self._compute(k * self.step))
        with self._lock:
            return self._store.setdefault(k, val)

    def __len__(self):
        return len(self._store)


@dataclass
class EffectiveModel:
    """Homogenized data: averaged potential, source and initial enthalpy, and the
    effective flux (a constant tensor times the u-modulation, or a psi0 table)."""

    potential: object
    K0: np.ndarray | None
    modulation: Constitutive | None
    source_mean: float
    source_nonlinearity: Constitutive | None
    source_shift: float
    initial_mean: float
    initial_profile: SlowProfile
    psi: DissipationPotential | None = None
    psi0_etas: np.ndarray | None = None
    psi0_values: np.ndarray | None = None
    psi0_derivs: np.ndarray | None = None
    correctors: CorrectorSet | None = None
    rationalization: Rationalization | None = None
    report: dict = field(default_factory=dict)

    def K0_at(self, u) -> np.ndarray:
        s = 1.0 if self.modulation is None else float(self.modulation(u))
        return s * self.K0

    def initial(self, x) -> np.ndarray:
        return self.initial_mean * np.asarray(self.initial_profile(x))

    def source(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.source_nonlinearity is None or self.source_mean == 0.0:
            return np.full(u.shape, self.source_shift)
        return self.source_mean * self.source_nonlinearity(u) + self.source_shift


def build_effective_model(problem, grid: G.CellGrid | None = None) -> EffectiveModel:
    """Average the oscillatory data and solve the cell problems of ``problem``."""
    P = averaged_potential(problem.potential)
    src = problem.source
    ini = problem.initial
    flux = problem.flux
    M, Q = problem.cell.M, problem.cell.Q
    model = EffectiveModel(
        potential=P, K0=None, modulation=None,
        source_mean=mean_value(src.oscillation), source_nonlinearity=src.nonlinearity,
        source_shift=src.h_f, initial_mean=mean_value(ini.oscillation),
        initial_profile=ini.profile)
    rtol = problem.tol("cg_rtol")
    if flux.kind == "linear":
        K = flux.K
        if grid is None:
            grid, Kr, rat = cell_grid_for(K, M, Q)
        else:
            Kr, rat = rationalized_matrix(K, Q)
        corr = solve_corrector(grid, Kr, rtol=rtol)
        model.K0 = effective_tensor(grid, Kr, corr)
        model.modulation = K.modulation
        model.correctors = corr
        model.rationalization = rat
        lo, hi = voigt_reuss_bounds(grid, Kr)
        model.report = {"K0": model.K0.tolist(), "reuss": lo, "voigt": hi,
                        "rationalization_error": rat.error, "supercell": rat.period,
                        "cell_M": grid.M}
        if rat.error > 0:
            # Q-sensitivity: the same tensor from the next coarser rationalization
            q = previous_denominator_bound(K, Q)
            cg_q, Kq, rat_q = cell_grid_for(K, M, q)
            K0_q = effective_tensor(cg_q, Kq, solve_corrector(cg_q, Kq, rtol=rtol))
            model.report.update(previous_Q=q, K0_previous_Q=K0_q.tolist(),
                                rationalization_error_previous_Q=rat_q.error,
                                Q_sensitivity=float(np.max(np.abs(K0_q - model.K0))))
    else:
        psi = flux.psi
        if psi.dim != 1:
            raise ValueError("tabulated homogenized dissipation is available in 1-D only")
        rat = rationalize(psi.frequencies(), Q)
        coef = rationalized_field(psi.coefficient, rat.base, Q) if psi.kind == "smooth_abs" else None
        Kq = rationalized_matrix(psi.K, Q)[0] if psi.kind == "quadratic" else None
        psi_r = replace(psi, coefficient=coef, K=Kq)
        if grid is None:
            grid = G.CellGrid(1, resolved_size(psi_r.frequencies(), M, rat.period), rat.period)
        etas = np.linspace(-flux.eta_max, flux.eta_max, flux.table_size)
        vals, ders = psi0_table(grid, psi_r, etas, gtol=problem.tol("psi0_gtol"))
        model.psi = psi_r
        model.psi0_etas, model.psi0_values, model.psi0_derivs = etas, vals, ders
        model.rationalization = rat
        model.report = {"psi0_table_size": len(etas), "rationalization_error": rat.error,
                        "supercell": rat.period, "cell_M": grid.M}
    return model
