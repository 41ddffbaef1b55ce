"""Convex potentials Psi(z, x, u) = g(z) * Psi_base(u) and their calculus.

Each potential exposes value, subdifferential interval, conjugate, the
conjugate derivative ``beta`` (which inverts ``w in dPsi(u)``) and the
resolvent ``(I + tau dPsi)^-1``.  All evaluators accept numpy arrays for
``u``/``w`` together with an array (or scalar) of multiplier values ``g``;
the module-level functions take points ``z`` instead and evaluate ``g``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate

from .fields import Constitutive, OscillatoryField, eval_field

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class KirchhoffMap:
    """V = H(u) = int_0^u h, for a catalog density h > 0 a.e."""

    h: Constitutive

    def __post_init__(self):
        if not self.h.kirchhoff_admissible:
            raise ValueError(f"catalog entry {self.h.name!r} is not positive a.e.")

    def __call__(self, u):
        return self.h.integral(u)

    def inverse(self, V):
        V = np.asarray(V, dtype=float)
        if self.h.name == "constant":
            out = V / self.h.param
        elif self.h.name == "power":
            out = np.sign(V) * np.abs(V) ** (1.0 / self.h.param)
        else:
            out = self.inverse_numeric(V)
        return out if out.ndim else float(out)

    def inverse_numeric(self, V, tol: float = 1e-13, maxiter: int = 200):
        """Monotone bisection for H^-1; used as an independent route."""
        V = np.atleast_1d(np.asarray(V, dtype=float))
        lo = -np.ones_like(V)
        hi = np.ones_like(V)
        for _ in range(200):
            bad = self.h.integral(lo) > V
            if not bad.any():
                break
            lo = np.where(bad, 2 * lo, lo)
        for _ in range(200):
            bad = self.h.integral(hi) < V
            if not bad.any():
                break
            hi = np.where(bad, 2 * hi, hi)
        for _ in range(maxiter):
            mid = 0.5 * (lo + hi)
            below = self.h.integral(mid) < V
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= tol * (1.0 + np.abs(mid))):
                break
        return 0.5 * (lo + hi)

    def derivative(self, u):
        return self.h(u)


@dataclass(frozen=True)
class ConvexPotential:
    """Strictly convex potential of a scalar unknown.

    kinds
        ``quadratic`` (a): a u^2 / 2
        ``stefan`` (L): u^2 / 2 + L u^+
        ``kirchhoff`` (h, base): the potential in V whose subdifferential is
        dPsi_base(H^-1(V))
        ``tabulated`` (breakpoints, values, curvature): through the given values,
        piecewise quadratic with second derivative ``curvature`` on every piece
        and outside the table
    ``oscillation`` is an optional multiplier field g(z) >= g0 > 0.
    """

    kind: str
    a: float = 1.0
    L: float = 1.0
    h: Constitutive | None = None
    base: "ConvexPotential | None" = None
    breakpoints: tuple[float, ...] = ()
    values: tuple[float, ...] = ()
    curvature: float = 0.0
    oscillation: OscillatoryField | None = None
    constants: dict = field(default_factory=dict, compare=False, hash=False)

    KINDS = ("quadratic", "stefan", "kirchhoff", "tabulated")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "quadratic" and not self.a > 0:
            raise ValueError("quadratic potential needs a > 0")
        if self.kind == "stefan" and not self.L > 0:
            raise ValueError("stefan potential needs L > 0")
        if self.kind == "kirchhoff":
            if self.h is None:
                raise ValueError("kirchhoff potential needs a density h")
            KirchhoffMap(self.h)
            if self.base is None:
                object.__setattr__(self, "base", ConvexPotential("quadratic"))
            if self.base.kind not in ("quadratic", "stefan"):
                raise ValueError("kirchhoff base must be quadratic or stefan")
        if self.kind == "tabulated":
            bp = tuple(float(b) for b in self.breakpoints)
            vals = tuple(float(v) for v in self.values)
            if len(bp) < 2 or len(bp) != len(vals) or np.any(np.diff(bp) <= 0):
                raise ValueError("tabulated potential needs >= 2 increasing breakpoints")
            object.__setattr__(self, "breakpoints", bp)
            object.__setattr__(self, "values", vals)
        if self.oscillation is not None and self.oscillation.lower_bound() <= 0:
            raise ValueError("oscillation multiplier must be bounded below by a positive g0")

    # ------------------------------------------------------------------ helpers

    @property
    def kirchhoff_map(self) -> KirchhoffMap | None:
        return KirchhoffMap(self.h) if self.kind == "kirchhoff" else None

    def multiplier(self, z) -> np.ndarray | float:
        if self.oscillation is None:
            return 1.0
        return eval_field(self.oscillation, z)

    def multiplier_bounds(self) -> tuple[float, float]:
        if self.oscillation is None:
            return 1.0, 1.0
        return self.oscillation.lower_bound(), self.oscillation.bound()

    def _tab_slopes(self):
        bp = np.asarray(self.breakpoints)
        v = np.asarray(self.values)
        c = self.curvature
        dx = np.diff(bp)
        chord = np.diff(v) / dx
        # one-sided derivatives of each quadratic piece at its endpoints
        left_end = chord - 0.5 * c * dx   # right-derivative at bp[i]
        right_end = chord + 0.5 * c * dx  # left-derivative at bp[i+1]
        return bp, v, dx, left_end, right_end

    # ------------------------------------------------------------------ base calculus (g = 1)

    def _value(self, u):
        k = self.kind
        if k == "quadratic":
            return 0.5 * self.a * u * u
        if k == "stefan":
            return 0.5 * u * u + self.L * np.maximum(u, 0.0)
        if k == "kirchhoff":
            H = KirchhoffMap(self.h)
            v = H.inverse(u)
            val = self.base.a * self.h.moment(v) if self.base.kind == "quadratic" \
                else self.h.moment(v) + self.base.L * H(np.maximum(v, 0.0))
            return val
        bp, vals, dx, sl, sr = self._tab_slopes()
        c = self.curvature
        u = np.asarray(u, dtype=float)
        i = np.clip(np.searchsorted(bp, u, side="right") - 1, 0, len(bp) - 2)
        t = u - bp[i]
        inside = vals[i] + sl[i] * t + 0.5 * c * t * t
        lo = vals[0] + sl[0] * (u - bp[0]) + 0.5 * c * (u - bp[0]) ** 2
        hi = vals[-1] + sr[-1] * (u - bp[-1]) + 0.5 * c * (u - bp[-1]) ** 2
        return np.where(u < bp[0], lo, np.where(u > bp[-1], hi, inside))

    def _subdiff(self, u):
        k = self.kind
        if k == "quadratic":
            s = self.a * u
            return s, s
        if k == "stefan":
            lo = np.where(u > 0, u + self.L, u)
            hi = np.where(u < 0, u, u + self.L)
            return lo, hi
        if k == "kirchhoff":
            v = KirchhoffMap(self.h).inverse(u)
            return self.base._subdiff(v)
        bp, vals, dx, sl, sr = self._tab_slopes()
        c = self.curvature
        u = np.asarray(u, dtype=float)
        i = np.clip(np.searchsorted(bp, u, side="right") - 1, 0, len(bp) - 2)
        d = sl[i] + c * (u - bp[i])
        d = np.where(u < bp[0], sl[0] + c * (u - bp[0]), d)
        d = np.where(u > bp[-1], sr[-1] + c * (u - bp[-1]), d)
        # kinks at interior breakpoints
        lo, hi = d.copy(), d.copy()
        for j in range(1, len(bp) - 1):
            at = u == bp[j]
            lo = np.where(at, sr[j - 1], lo)
            hi = np.where(at, sl[j], hi)
        return lo, hi

    def _beta(self, w):
        k = self.kind
        if k == "quadratic":
            return w / self.a
        if k == "stefan":
            return np.where(w < 0, w, np.where(w > self.L, w - self.L, 0.0))
        if k == "kirchhoff":
            return KirchhoffMap(self.h)(self.base._beta(w))
        return self._beta_bisect(w)

    def _beta_slope(self, w):
        """Derivative of beta (generalized at breakpoints: mean of one-sided values)."""
        k = self.kind
        if k == "quadratic":
            return np.full_like(np.asarray(w, dtype=float), 1.0 / self.a)
        if k == "stefan":
            s = np.where((w < 0) | (w > self.L), 1.0, 0.0)
            return np.where((w == 0) | (w == self.L), 0.5, s)
        if k == "kirchhoff":
            return self.h(self.base._beta(w)) * self.base._beta_slope(w)
        if self.curvature <= 0:
            return np.zeros_like(np.asarray(w, dtype=float))
        lo, hi = self._subdiff(self._beta(w))
        return np.where(hi > lo, 0.0, 1.0 / self.curvature)

    def _beta_bisect(self, w, tol: float = 1e-14):
        w = np.atleast_1d(np.asarray(w, dtype=float))
        lo = np.full_like(w, -1.0)
        hi = np.full_like(w, 1.0)
        for _ in range(200):
            bad = self._subdiff(lo)[1] > w
            if not bad.any():
                break
            lo = np.where(bad, 2 * lo, lo)
        for _ in range(200):
            bad = self._subdiff(hi)[0] < w
            if not bad.any():
                break
            hi = np.where(bad, 2 * hi, hi)
        for _ in range(300):
            mid = 0.5 * (lo + hi)
            slo, shi = self._subdiff(mid)
            go_right = shi < w
            go_left = slo > w
            lo = np.where(go_right, mid, lo)
            hi = np.where(go_left, mid, hi)
            hit = ~(go_right | go_left)
            lo = np.where(hit, mid, lo)
            hi = np.where(hit, mid, hi)
            if np.all(hi - lo <= tol * (1.0 + np.abs(mid))):
                break
        return 0.5 * (lo + hi)

    def _conjugate(self, w):
        k = self.kind
        if k == "quadratic":
            return w * w / (2.0 * self.a)
        if k == "stefan":
            return np.where(w < 0, 0.5 * w * w,
                            np.where(w > self.L, 0.5 * (w - self.L) ** 2, 0.0))
        # Fenchel equality at the maximizer u = beta(w)
        u = self._beta(w)
        return w * u - self._value(u)

    # ------------------------------------------------------------------ scaled calculus

    def value(self, u, g=1.0):
        u = np.asarray(u, dtype=float)
        return _squeeze(g * self._value(u))

    def subdifferential(self, u, g=1.0):
        u = np.asarray(u, dtype=float)
        lo, hi = self._subdiff(u)
        return _squeeze(g * lo), _squeeze(g * hi)

    def conjugate(self, w, g=1.0):
        w = np.asarray(w, dtype=float)
        return _squeeze(g * self._conjugate(w / g))

    def beta(self, w, g=1.0):
        w = np.asarray(w, dtype=float)
        return _squeeze(self._beta(w / g))

    def beta_slope(self, w, g=1.0):
        w = np.asarray(w, dtype=float)
        return _squeeze(self._beta_slope(w / g) / g)

    def selection(self, u, g=1.0, where: str = "lo"):
        lo, hi = self.subdifferential(u, g)
        if where == "lo":
            return lo
        if where == "hi":
            return hi
        return 0.5 * (np.asarray(lo) + np.asarray(hi))

    def resolvent(self, v, tau: float, g=1.0):
        """u with u + tau * s = v for some s in g dPsi_base(u)."""
        if not tau > 0:
            raise ValueError("tau must be positive")
        v = np.asarray(v, dtype=float)
        g = np.asarray(g, dtype=float)
        if self.kind == "quadratic":
            return _squeeze(v / (1.0 + tau * g * self.a))
        if self.kind == "stefan":
            tl = tau * g * self.L
            return _squeeze(np.where(v < 0, v / (1.0 + tau * g),
                                     np.where(v > tl, (v - tl) / (1.0 + tau * g), 0.0)))
        return _squeeze(self._resolvent_bisect(v, tau, g))

    def _resolvent_bisect(self, v, tau, g, tol: float = 1e-14):
        v, g = np.broadcast_arrays(np.atleast_1d(v), np.atleast_1d(g))
        lo = v - 1.0 - np.abs(v)
        hi = v + 1.0 + np.abs(v)
        f = lambda u, which: u + tau * g * self._subdiff(u)[which]
        for _ in range(200):
            bad = f(lo, 1) > v
            if not bad.any():
                break
            lo = np.where(bad, lo - 2 * (hi - lo), lo)
        for _ in range(200):
            bad = f(hi, 0) < v
            if not bad.any():
                break
            hi = np.where(bad, hi + 2 * (hi - lo), hi)
        for _ in range(300):
            mid = 0.5 * (lo + hi)
            right = f(mid, 1) < v
            left = f(mid, 0) > v
            lo = np.where(right, mid, lo)
            hi = np.where(left, mid, hi)
            hit = ~(right | left)
            lo = np.where(hit, mid, lo)
            hi = np.where(hit, mid, hi)
            if np.all(hi - lo <= tol * (1.0 + np.abs(mid))):
                break
        return 0.5 * (lo + hi)

    # ------------------------------------------------------------------ constants

    def growth_constants(self) -> dict:
        """Constants c, h of the two-sided Lipschitz growth bound and
        c_tilde, W, h_tilde of the quadratic lower bound, including the multiplier.

        Declared ``constants`` take precedence.
        """
        gmin, gmax = self.multiplier_bounds()
        k = self.kind
        if k == "quadratic":
            d = dict(c=gmax * self.a, h=0.0, c_tilde=0.5 * gmin * self.a, W=0.0, h_tilde=0.0)
        elif k == "stefan":
            d = dict(c=gmax, h=gmax * self.L, c_tilde=0.5 * gmin, W=0.0, h_tilde=0.0)
        elif k == "kirchhoff":
            b = self.base.a if self.base.kind == "quadratic" else 1.0
            lat = self.base.L if self.base.kind == "stefan" else 0.0
            if self.h.name == "constant":
                # Psi_tilde(V) = Psi_base(V / c_h)
                ch = self.h.param
                d = dict(c=gmax * b / ch, h=gmax * lat, c_tilde=0.5 * gmin * b / ch,
                         W=0.0, h_tilde=0.0)
            else:
                # slope b |V|^{1/m} + L <= b |V| + b + L; growth is sub-quadratic
                d = dict(c=gmax * b, h=gmax * (b + lat), c_tilde=0.0, W=0.0, h_tilde=0.0)
        else:
            _, vals, _, sl, sr = self._tab_slopes()
            c = self.curvature
            d = dict(c=gmax * c, h=gmax * float(max(abs(sl[0]), abs(sr[-1]), *np.abs(sl),
                                                    *np.abs(sr))) + gmax * c * max(
                         abs(self.breakpoints[0]), abs(self.breakpoints[-1])),
                     c_tilde=0.0, W=0.0, h_tilde=0.0)
        d.update(self.constants)
        return d

    def coercivity_of_conjugate(self) -> tuple[float, float]:
        """(gamma, gamma_tilde) with Psi*(w) >= gamma w^2 + gamma_tilde pointwise.

        Obtained from the growth bound |Psi(l)| <= c l^2 + h |l| + |Psi(0)| by
        testing the conjugate at l = w / (2c).
        """
        d = self.growth_constants()
        c, h = float(d["c"]), float(d["h"])
        _, gmax = self.multiplier_bounds()
        psi0 = gmax * abs(float(self._value(np.asarray(0.0))))
        if h == 0.0:
            return 1.0 / (4.0 * c), -psi0
        return 1.0 / (8.0 * c), -h * h / (2.0 * c) - psi0


def _squeeze(x):
    x = np.asarray(x)
    return x if x.ndim else float(x)


# --------------------------------------------------------------------------
# module-level operations


def psi_value(P: ConvexPotential, z, x, u):
    return P.value(u, P.multiplier(z))


def subdifferential(P: ConvexPotential, z, x, u):
    return P.subdifferential(u, P.multiplier(z))


def conjugate(P: ConvexPotential, z, x, w):
    """Psi*(z, x, w); closed form for quadratic/stefan, Fenchel-equality otherwise."""
    return P.conjugate(w, P.multiplier(z))


def conjugate_numeric(P: ConvexPotential, w: float, g: float = 1.0, tol: float = 1e-10) -> float:
    """Numerical Legendre transform by golden-section search.

    The maximizer of u w - g Psi_base(u) lies in the bracket built from the
    quadratic lower bound constants; golden section is run on the strictly
    concave objective.
    """
    d = P.growth_constants()
    c_low = max(float(d.get("c_tilde", 0.0)), 1e-3)
    c_grow = abs(float(d.get("h", 0.0))) + abs(float(d.get("W", 0.0)))
    R = (abs(w) + c_grow) / c_low + 1.0
    a, b = -R, R
    obj = lambda u: w * u - g * float(P._value(np.asarray(u)))
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = obj(x1), obj(x2)
    while b - a > tol * (1.0 + abs(a) + abs(b)):
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = obj(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = obj(x1)
    return max(obj(0.5 * (a + b)), f1, f2)


def beta(P: ConvexPotential, z, x, w):
    return P.beta(w, P.multiplier(z))


def resolvent(P: ConvexPotential, z, x, v, tau: float):
    return P.resolvent(v, tau, P.multiplier(z))


def kirchhoff(K: KirchhoffMap, u):
    return K(u)


def kirchhoff_inverse(K: KirchhoffMap, V):
    return K.inverse(V)


def averaged_potential(P: ConvexPotential) -> ConvexPotential:
    """Mean over the fast variable: Psi_bar = M(g) * Psi_base."""
    if P.oscillation is None:
        return P
    gbar = P.oscillation.constant
    if gbar <= 0:
        raise ValueError("multiplier has nonpositive mean")
    const = OscillatoryField.constant_field(gbar, P.oscillation.dim)
    return replace(P, oscillation=None if gbar == 1.0 else const, constants=dict(P.constants))


def potential_quadrature_value(P: ConvexPotential, V: float) -> float:
    """Kirchhoff potential by direct quadrature of the selection times h (test oracle)."""
    H = KirchhoffMap(P.h)
    u = float(H.inverse(V))
    sel = lambda s: float(P.base._subdiff(np.asarray(s))[0]) * float(P.h(s))
    val, _ = integrate.quad(sel, 0.0, u, limit=200, epsabs=1e-13, epsrel=1e-12)
    return val
