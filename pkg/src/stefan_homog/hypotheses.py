"""Sampled checks of the structural hypotheses on a problem spec.

Every condition is tested on a deterministic lattice plus seeded random probes.
A failing check reports the sample point where the inequality breaks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .convex import ConvexPotential
from .fields import MatrixField

U_RANGE = 10.0
N_LATTICE = 41
N_PROBES = 200


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""
    witness: dict | None = None

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail,
                "witness": self.witness}


@dataclass
class ValidationReport:
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.as_dict() for c in self.checks]}


def _tol(*scales) -> np.ndarray:
    s = sum(np.abs(x) for x in scales)
    return 1e-12 * (1.0 + s)


def _u_samples(rng, spread: float = U_RANGE) -> np.ndarray:
    lat = np.linspace(-spread, spread, N_LATTICE)
    return np.concatenate([lat, rng.uniform(-spread, spread, N_PROBES)])


def _z_samples(freqs, dim: int, per_axis: int = 17) -> np.ndarray:
    nz = [abs(c) for f in freqs for c in np.atleast_1d(f) if c != 0.0]
    span = 2.0 * math.pi / min(nz) if nz else 1.0
    s = np.linspace(0.0, span, per_axis, endpoint=False)
    if dim == 1:
        return s
    return np.stack(np.meshgrid(s, s, indexing="ij"), axis=-1).reshape(-1, 2)


def _eta_samples(rng, dim: int) -> np.ndarray:
    if dim == 1:
        return np.concatenate([np.linspace(-U_RANGE, U_RANGE, 21),
                               rng.uniform(-U_RANGE, U_RANGE, 40)])[:, None]
    s = np.linspace(-U_RANGE, U_RANGE, 9)
    lat = np.stack(np.meshgrid(s, s, indexing="ij"), axis=-1).reshape(-1, 2)
    return np.concatenate([lat, rng.uniform(-U_RANGE, U_RANGE, (40, 2))])


def _witness(**kw) -> dict:
    return {k: (np.asarray(v).tolist() if np.ndim(v) else float(v)) for k, v in kw.items()}


# --------------------------------------------------------------------------
# potential


def _multiplier_samples(P: ConvexPotential, dim: int) -> np.ndarray:
    if P.oscillation is None:
        return np.array([1.0])
    z = _z_samples([m.frequency for m in P.oscillation.modes], dim)
    return np.unique(np.atleast_1d(np.asarray(P.multiplier(z), dtype=float)))


def check_strict_convexity(P: ConvexPotential, rng, dim: int = 1) -> Check:
    """Psi(th u1 + (1-th) u2) < th Psi(u1) + (1-th) Psi(u2) for u1 != u2."""
    lat = np.linspace(-U_RANGE, U_RANGE, N_LATTICE)
    u1, u2 = np.meshgrid(lat, lat, indexing="ij")
    p1, p2 = rng.uniform(-U_RANGE, U_RANGE, (2, N_PROBES))
    u1 = np.concatenate([u1.ravel(), p1])
    u2 = np.concatenate([u2.ravel(), p2])
    keep = np.abs(u1 - u2) >= 1e-3
    u1, u2 = u1[keep], u2[keep]
    for g in _multiplier_samples(P, dim):
        for th in (0.25, 0.5, 0.75):
            mid = P.value(th * u1 + (1 - th) * u2, g)
            chord = th * P.value(u1, g) + (1 - th) * P.value(u2, g)
            gap = chord - mid
            bad = gap <= _tol(chord)
            if np.any(bad):
                i = int(np.argmax(bad))
                return Check("potential_strict_convexity", False,
                             "midpoint inequality is not strict",
                             _witness(u1=u1[i], u2=u2[i], theta=th, g=g, gap=gap[i]))
    return Check("potential_strict_convexity", True, f"{u1.size} pairs, theta in (.25, .5, .75)")


def check_lipschitz_growth(P: ConvexPotential, rng, dim: int = 1) -> Check:
    """|Psi(l) - Psi(m)| <= |l - m| (c max(|l|, |m|) + h) with the potential's constants."""
    k = P.growth_constants()
    c, h = float(k["c"]), float(k["h"])
    lat = np.linspace(-U_RANGE, U_RANGE, N_LATTICE)
    a, b = np.meshgrid(lat, lat, indexing="ij")
    pa, pb = rng.uniform(-U_RANGE, U_RANGE, (2, N_PROBES))
    a = np.concatenate([a.ravel(), pa])
    b = np.concatenate([b.ravel(), pb])
    for g in _multiplier_samples(P, dim):
        lhs = np.abs(P.value(a, g) - P.value(b, g))
        rhs = np.abs(a - b) * (c * np.maximum(np.abs(a), np.abs(b)) + h)
        bad = lhs > rhs + _tol(rhs)
        if np.any(bad):
            i = int(np.argmax(bad))
            return Check("potential_growth", False, f"bound fails with c={c:g}, h={h:g}",
                         _witness(l=a[i], m=b[i], g=g, lhs=lhs[i], rhs=rhs[i]))
    return Check("potential_growth", True, f"c={c:g}, h={h:g}")


def check_quadratic_lower_bound(P: ConvexPotential, rng, dim: int = 1) -> Check:
    """Psi(l) >= c_tilde l^2 + W l + h_tilde with c_tilde > 0."""
    k = P.growth_constants()
    ct, W, ht = float(k["c_tilde"]), float(k["W"]), float(k["h_tilde"])
    if not ct > 0:
        return Check("potential_coercivity", False, f"no positive quadratic constant (c_tilde={ct:g})",
                     _witness(c_tilde=ct))
    u = np.concatenate([_u_samples(rng), [-1e3, 1e3, -1e6, 1e6]])
    for g in _multiplier_samples(P, dim):
        val = P.value(u, g)
        low = ct * u * u + W * u + ht
        bad = val < low - _tol(low)
        if np.any(bad):
            i = int(np.argmax(bad))
            return Check("potential_coercivity", False, "lower bound fails",
                         _witness(u=u[i], g=g, value=val[i], bound=low[i]))
    return Check("potential_coercivity", True, f"c_tilde={ct:g}, W={W:g}, h_tilde={ht:g}")


# --------------------------------------------------------------------------
# flux


def _flux_sampler(flux, dim: int):
    """(z samples, evaluator of a(u, eta) at every z sample)."""
    if flux.kind == "linear":
        K: MatrixField = flux.K
        z = _z_samples(K.frequencies(), dim)
        mats = np.asarray(K(z), dtype=float).reshape(-1, dim, dim)
        h = K.modulation

        def a(u, eta):
            s = 1.0 if h is None else np.asarray(h(u), dtype=float)[..., None, None, None]
            return np.einsum("...ij,...j->...i", s * mats, eta[..., None, :])
        return z, a
    psi = flux.psi
    z = _z_samples(psi.frequencies(), dim)
    coef = np.asarray(psi.sample(z), dtype=float)
    h = psi.modulation
    if psi.kind == "quadratic":
        coef = coef.reshape(-1, dim, dim)

    def a(u, eta):
        s = 1.0 if h is None else np.asarray(h(u), dtype=float)[..., None, None]
        full = np.broadcast_to(eta[..., None, :], eta.shape[:-1] + coef.shape[:1] + (dim,))
        base = psi.gradient(coef, full)
        return s * base
    return z, a


def _grid_u_eta(rng, dim: int):
    u = _u_samples(rng)
    eta = _eta_samples(rng, dim)
    U = np.repeat(u, eta.shape[0])
    E = np.tile(eta, (u.size, 1))
    return U, E


def check_monotone(flux, rng, dim: int) -> Check:
    """(a(eta1) - a(eta2)).(eta1 - eta2) >= 0 at every sampled z, u."""
    z, a = _flux_sampler(flux, dim)
    u = _u_samples(rng)[::4]
    e1 = _eta_samples(rng, dim)
    e2 = e1[rng.permutation(e1.shape[0])]
    for uu in u:
        d = np.sum((a(np.array(uu), e1) - a(np.array(uu), e2)) * (e1 - e2)[:, None, :], axis=-1)
        bad = d < -_tol(d)
        if np.any(bad):
            i, j = np.unravel_index(int(np.argmax(bad)), d.shape)
            return Check("flux_monotone", False, "flux is not monotone in eta",
                         _witness(u=uu, eta1=e1[i], eta2=e2[i], z=z[j], value=d[i, j]))
    return Check("flux_monotone", True, f"{u.size} u-samples x {e1.shape[0]} eta pairs")


def check_coercive_flux(flux, rng, dim: int) -> Check:
    """a(z, u, eta).eta >= c_alpha |eta|^2 + h_alpha."""
    z, a = _flux_sampler(flux, dim)
    c, h0 = flux.coercivity, flux.h_alpha
    U, E = _grid_u_eta(rng, dim)
    val = np.sum(a(U, E) * E[:, None, :], axis=-1)
    low = c * np.sum(E * E, axis=-1)[:, None] + h0
    bad = val < low - _tol(low)
    if np.any(bad):
        i, j = np.unravel_index(int(np.argmax(bad)), val.shape)
        return Check("flux_coercivity", False, f"a.eta < {c:g}|eta|^2 + {h0:g}",
                     _witness(u=U[i], eta=E[i], z=z[j], lhs=val[i, j], rhs=low[i, 0]))
    return Check("flux_coercivity", True, f"c_alpha={c:g}, h_alpha={h0:g}")


def check_holder_flux(flux, rng, dim: int) -> Check:
    """|a(v1, e1) - a(v2, e2)| <= d (|v1 - v2|^sigma + |e1 - e2|), 0 < sigma < 1.

    d is the sampled supremum of the ratio; the check fails when that ratio
    keeps growing as the samples are spread over a ten times larger range.
    """
    mod = flux.K.modulation if flux.kind == "linear" else flux.psi.modulation
    sigma = 0.5 if mod is None else min(max(mod.holder_exponent, 0.0), 1.0)
    if mod is not None and not 0.0 < sigma:
        return Check("flux_holder", False, f"modulation {mod.name!r} has no global Hölder class",
                     _witness(sigma=sigma))
    sigma = min(sigma, 0.5) if sigma >= 1.0 else sigma
    z, a = _flux_sampler(flux, dim)

    def sup_ratio(spread):
        v1 = rng.uniform(-spread, spread, 400)
        v2 = v1 + rng.uniform(-1.0, 1.0, 400)
        e1 = rng.uniform(-spread, spread, (400, dim))
        e2 = e1 + rng.uniform(-1.0, 1.0, (400, dim))
        num = np.linalg.norm(a(v1, e1) - a(v2, e2), axis=-1)
        den = (np.abs(v1 - v2) ** sigma + np.linalg.norm(e1 - e2, axis=-1))[:, None]
        r = num / den
        i, j = np.unravel_index(int(np.argmax(r)), r.shape)
        return float(r[i, j]), _witness(v1=v1[i], v2=v2[i], eta1=e1[i], eta2=e2[i], z=z[j])

    d1, _ = sup_ratio(U_RANGE)
    d2, wit = sup_ratio(10.0 * U_RANGE)
    if d2 > 1.1 * d1 + 1e-12:
        return Check("flux_holder", False,
                     f"difference ratio grows with the sample range ({d1:.4g} -> {d2:.4g})",
                     {**wit, "ratio": d2})
    return Check("flux_holder", True, f"sigma={sigma:g}, d_alpha~{max(d1, d2):.4g}")


def check_ellipticity(flux, dim: int) -> Check:
    """k0 |xi|^2 <= K xi . xi <= k1 |xi|^2 on the coefficient lattice."""
    if flux.kind != "linear":
        return Check("ellipticity", True, "not a linear flux")
    z = _z_samples(flux.K.frequencies(), dim, 41 if dim == 1 else 21)
    mats = np.asarray(flux.K(z), dtype=float).reshape(-1, dim, dim)
    ev = np.linalg.eigvalsh(0.5 * (mats + np.swapaxes(mats, -1, -2)))
    k0, k1 = flux.bounds
    lo, hi = ev.min(axis=-1), ev.max(axis=-1)
    bad = (lo < k0 - 1e-12) | (hi > k1 + 1e-12)
    if np.any(bad):
        i = int(np.argmax(bad))
        return Check("ellipticity", False, f"eigenvalues leave [{k0:g}, {k1:g}]",
                     _witness(z=z[i], lo=lo[i], hi=hi[i]))
    return Check("ellipticity", True, f"eigenvalues in [{lo.min():.6g}, {hi.max():.6g}]")


def check_kirchhoff_density(flux, rng) -> Check:
    """h(u) > 0 away from a null set, so H is strictly increasing."""
    h = flux.h if flux.kind == "linear" else flux.psi.modulation
    if h is None:
        return Check("kirchhoff_density", True, "no u-modulation")
    if not h.kirchhoff_admissible:
        return Check("kirchhoff_density", False, f"{h.name!r} is not positive almost everywhere",
                     _witness(u=0.0 if h.name != "constant" else 1.0))
    u = _u_samples(rng)
    u = u[u != 0.0]
    vals = np.asarray(h(u), dtype=float)
    if np.any(vals <= 0):
        i = int(np.argmax(vals <= 0))
        return Check("kirchhoff_density", False, "h vanishes on a sample", _witness(u=u[i], h=vals[i]))
    return Check("kirchhoff_density", True, f"{h.name} positive on samples")


# --------------------------------------------------------------------------
# source


def check_source_growth(source, rng) -> Check:
    """|f(z, u)| <= c_f |u|^sigma + h_f with 0 < sigma < 1."""
    F = source.nonlinearity
    amp = source.oscillation.bound()
    if F is None or amp == 0.0:
        return Check("source_growth", True, "source does not depend on u")
    if F.name in ("constant", "saturating"):
        # bounded nonlinearity: absorbed into the h_f term for any sigma
        c_f, sigma = 1.0, 0.5
        h_f = abs(source.h_f) + amp * (abs(F.param) if F.name == "constant" else 1.0)
    else:
        c_f, sigma = source.growth()
        h_f = abs(source.h_f)
    if not 0.0 < sigma < 1.0:
        return Check("source_growth", False, f"growth exponent {F.growth_exponent:g} is not in (0, 1)",
                     _witness(sigma=F.growth_exponent))
    u = np.concatenate([_u_samples(rng), [-1e3, 1e3, -1e6, 1e6]])
    lhs = amp * np.abs(np.asarray(F(u), dtype=float)) + abs(source.h_f)
    rhs = c_f * np.abs(u) ** sigma + h_f
    bad = lhs > rhs + _tol(rhs)
    if np.any(bad):
        i = int(np.argmax(bad))
        return Check("source_growth", False, "growth bound fails", _witness(u=u[i], lhs=lhs[i], rhs=rhs[i]))
    return Check("source_growth", True, f"c_f={c_f:g}, sigma={sigma:g}")


def validate_hypotheses(problem) -> ValidationReport:
    """Run every structural check on ``problem``; failures are reported, not raised."""
    rng = np.random.default_rng(problem.seed)
    dim = problem.dim
    P = problem.potential
    fl = problem.flux
    checks = [
        check_strict_convexity(P, rng, dim),
        check_lipschitz_growth(P, rng, dim),
        check_quadratic_lower_bound(P, rng, dim),
        check_monotone(fl, rng, dim),
        check_coercive_flux(fl, rng, dim),
        check_holder_flux(fl, rng, dim),
        check_source_growth(problem.source, rng),
        check_ellipticity(fl, dim),
        check_kirchhoff_density(fl, rng),
    ]
    return ValidationReport(checks)
