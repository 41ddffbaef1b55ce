import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stefan_homog.convex import (ConvexPotential, KirchhoffMap, averaged_potential, conjugate_numeric,
                                 potential_quadrature_value)
from stefan_homog.fields import Constitutive, OscillatoryField

STEFAN = ConvexPotential("stefan", L=1.0)
QUAD = ConvexPotential("quadratic", a=2.0)
LATTICE = np.linspace(-5.0, 5.0, 100)


def stefan_conjugate_closed_form(w, L=1.0):
    w = np.asarray(w, dtype=float)
    return 0.5 * np.minimum(w, 0.0) ** 2 + 0.5 * np.maximum(w - L, 0.0) ** 2


@pytest.mark.parametrize("P", [QUAD, STEFAN], ids=["quadratic", "stefan"])
@pytest.mark.parametrize("where", ["lo", "hi", "mid"])
def test_fenchel_equality_on_subdifferential(P, where):
    w = P.selection(LATTICE, where=where)
    gap = P.value(LATTICE) + P.conjugate(w) - LATTICE * w
    assert np.max(np.abs(gap)) <= 1e-8


def test_stefan_conjugate_closed_form():
    w = np.linspace(-4, 5, 200)
    assert np.allclose(STEFAN.conjugate(w), stefan_conjugate_closed_form(w), atol=1e-14)


@pytest.mark.parametrize("w", [-3.0, -0.2, 0.0, 0.4, 1.0, 2.5])
def test_conjugate_matches_numeric_legendre(w):
    assert STEFAN.conjugate(w) == pytest.approx(conjugate_numeric(STEFAN, w), abs=1e-8)
    assert QUAD.conjugate(w) == pytest.approx(conjugate_numeric(QUAD, w), abs=1e-8)


@settings(max_examples=100, deadline=None)
@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(0.5, 3.0))
def test_fenchel_young_inequality(u, w, g):
    for P in (STEFAN, QUAD):
        assert P.value(u, g) + P.conjugate(w, g) >= u * w - 1e-9 * (1 + abs(u * w))


@settings(max_examples=100, deadline=None)
@given(st.floats(-20, 20), st.floats(0.5, 3.0))
def test_beta_is_inverse_of_subdifferential(w, g):
    for P in (STEFAN, QUAD):
        u = P.beta(w, g)
        lo, hi = P.subdifferential(u, g)
        assert lo - 1e-10 <= w <= hi + 1e-10


@settings(max_examples=100, deadline=None)
@given(st.floats(-20, 20), st.floats(-20, 20))
def test_beta_monotone_and_lipschitz(w1, w2):
    u1, u2 = STEFAN.beta(w1), STEFAN.beta(w2)
    assert (u1 - u2) * (w1 - w2) >= 0
    assert abs(u1 - u2) <= abs(w1 - w2) + 1e-12


@settings(max_examples=80, deadline=None)
@given(st.floats(-10, 10), st.floats(0.01, 5.0))
def test_resolvent_solves_inclusion(v, tau):
    for P in (STEFAN, QUAD, ConvexPotential("tabulated", breakpoints=(-1, 0, 2),
                                            values=(1.0, 0.0, 3.0), curvature=1.0)):
        u = P.resolvent(v, tau)
        s = (v - u) / tau
        # (u, s) lies on the graph of the subdifferential up to a 1e-10 shift in u,
        # which absorbs iterates that land next to a kink
        lo, _ = P.subdifferential(u - 1e-10)
        _, hi = P.subdifferential(u + 1e-10)
        assert lo - 1e-8 <= s <= hi + 1e-8


def test_resolvent_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        STEFAN.resolvent(1.0, 0.0)


def test_multiplier_scales_potential():
    g = OscillatoryField.sinusoid(2.0, 1.0, 2 * math.pi)
    P = ConvexPotential("stefan", L=1.0, oscillation=g)
    z = np.array([0.0, 0.25, 0.6])
    u = np.array([-1.0, 0.5, 2.0])
    assert np.allclose(P.value(u, P.multiplier(z)), g(z) * STEFAN.value(u))
    Pbar = averaged_potential(P)
    assert Pbar.oscillation.constant == 2.0 and Pbar.oscillation.is_constant


def test_nonpositive_multiplier_rejected():
    with pytest.raises(ValueError):
        ConvexPotential("quadratic", oscillation=OscillatoryField.sinusoid(0.5, 1.0, 1.0))


def test_coercivity_of_conjugate_bounds_samples():
    for P in (STEFAN, QUAD):
        gam, gam_t = P.coercivity_of_conjugate()
        w = np.linspace(-50, 50, 2001)
        assert np.all(P.conjugate(w) >= gam * w * w + gam_t - 1e-12)


def test_kirchhoff_map_round_trip():
    H = KirchhoffMap(Constitutive("power", 3.0))
    u = np.linspace(-2, 2, 41)
    assert np.allclose(H.inverse(H(u)), u, atol=1e-12)
    assert np.allclose(H(u), np.sign(u) * np.abs(u) ** 3)


def test_kirchhoff_potential_matches_quadrature():
    P = ConvexPotential("kirchhoff", h=Constitutive("power", 2.0),
                        base=ConvexPotential("stefan", L=1.0))
    for V in (-2.0, -0.3, 0.5, 3.0):
        assert P.value(V) == pytest.approx(potential_quadrature_value(P, V), abs=1e-9)


def test_kirchhoff_subdifferential_is_base_at_inverse():
    h = Constitutive("power", 2.0)
    P = ConvexPotential("kirchhoff", h=h, base=STEFAN)
    V = np.array([-4.0, 0.0, 4.0])
    u = KirchhoffMap(h).inverse(V)
    lo, hi = P.subdifferential(V)
    blo, bhi = STEFAN.subdifferential(u)
    assert np.allclose(lo, blo) and np.allclose(hi, bhi)


def test_tabulated_absolute_value_is_affine_on_pieces():
    P = ConvexPotential("tabulated", breakpoints=(-1, 0, 1), values=(1, 0, 1), curvature=0.0)
    assert P.value(0.5) == pytest.approx(0.5)
    lo, hi = P.subdifferential(0.0)
    assert lo == pytest.approx(-1.0) and hi == pytest.approx(1.0)


def test_invalid_potentials():
    with pytest.raises(ValueError):
        ConvexPotential("quadratic", a=0.0)
    with pytest.raises(ValueError):
        ConvexPotential("stefan", L=-1.0)
    with pytest.raises(ValueError):
        ConvexPotential("cubic")
