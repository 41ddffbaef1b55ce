import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stefan_homog import grid as G
from stefan_homog.cell import build_effective_model
from stefan_homog.config import parse_config
from stefan_homog.convex import ConvexPotential
from stefan_homog.evolution import (EvolutionProblem, LinearFlux, ModulatedFlux, StepFailure,
                                    homogenized_problem, oscillatory_problem, solve_evolution,
                                    solve_linear_kirchhoff)
from stefan_homog.fields import Constitutive


def heat_problem(N=64, T=0.05, dt=1e-3, w0=None, potential=None):
    g = G.DomainGrid(1, N)
    x = g.coords()
    w0 = np.sin(math.pi * x) if w0 is None else w0
    pot = potential or ConvexPotential("quadratic", a=1.0)
    return EvolutionProblem(g, pot, LinearFlux(g, 1.0), w0, T, dt,
                            tolerances={"newton_tol": 1e-12})


def test_heat_decay_of_first_mode(configs_dir):
    spec = parse_config(configs_dir / "heat.json")
    P = homogenized_problem(spec, build_effective_model(spec), spec.domain.N)
    tr = solve_evolution(P)
    mid = P.grid.N // 2 - 1
    assert tr.temperature()[-1][mid] == pytest.approx(math.exp(-math.pi ** 2 * 0.1), abs=2e-2)


def test_heat_discrete_decay_factor():
    # backward Euler on the discrete sine: each step divides by 1 + dt * lambda_h
    P = heat_problem(N=32, T=0.01, dt=1e-3)
    tr = solve_evolution(P)
    h = P.grid.h
    lam = 4.0 / h ** 2 * math.sin(math.pi * h / 2) ** 2
    factor = (1.0 + P.dt * lam) ** (-P.steps)
    x = P.grid.coords()[P.grid.interior_index()]
    assert np.allclose(tr.u[-1], factor * np.sin(math.pi * x), atol=1e-10)


def test_mass_changes_by_boundary_flux_only():
    P = heat_problem(N=32, T=0.02)
    tr = solve_evolution(P)
    A = P.flux.A
    idx = P.grid.interior_index()
    h = P.grid.h
    for n in range(P.steps):
        full = np.zeros(P.grid.size)
        full[idx] = tr.u[n + 1]
        dm = tr.records[n + 1].mass - tr.records[n].mass
        assert dm == pytest.approx(-P.dt * h * float(np.sum((A @ full)[idx])), abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=15, max_size=15))
def test_heat_l2_norm_nonincreasing(vals):
    g = G.DomainGrid(1, 16)
    w0 = np.zeros(g.size)
    w0[g.interior_index()] = vals
    tr = solve_evolution(heat_problem(N=16, T=0.01, w0=w0))
    l2 = [r.l2_w for r in tr.records]
    assert all(b <= a + 1e-12 for a, b in zip(l2, l2[1:]))
    assert np.max(np.abs(tr.u[-1])) <= np.max(np.abs(vals)) + 1e-12


def test_stefan_run_records(stefan_spec):
    P = oscillatory_problem(stefan_spec, 0.125)
    tr = solve_evolution(P)
    assert max(r.fenchel_gap for r in tr.records) < 1e-8
    assert min(r.bound - r.energy for r in tr.records) >= -1e-6
    assert all(r.residual <= 1e-6 for r in tr.records)
    assert tr.times[-1] == pytest.approx(stefan_spec.domain.T)


def test_stefan_temperature_vanishes_in_mushy_zone():
    pot = ConvexPotential("stefan", L=1.0)
    g = G.DomainGrid(1, 32)
    w0 = np.full(g.size, 0.5)
    tr = solve_evolution(heat_problem(N=32, T=0.005, w0=w0, potential=pot))
    w, u = tr.w[-1], tr.u[-1]
    mushy = (w > 1e-9) & (w < 1.0 - 1e-9)
    assert mushy.any() and np.all(u[mushy] == 0.0)


def test_kirchhoff_form_matches_direct_solve():
    h = Constitutive("power", 2.0)
    g = G.DomainGrid(1, 64)
    x = g.coords()
    w0 = 0.5 + np.sin(math.pi * x)
    P = EvolutionProblem(g, ConvexPotential("quadratic", a=1.0), ModulatedFlux(g, 1.0, h), w0,
                         0.02, 1e-3, tolerances={"newton_tol": 1e-12})
    direct = solve_evolution(P)
    _, _, u = solve_linear_kirchhoff(P, np.array([[1.0]]), h)
    assert np.max(np.abs(direct.u[-1] - u[-1])) < 5e-3


def test_step_failure_triggers_halving_then_raises():
    P = heat_problem(N=16, T=0.002)
    P = replace(P, potential=ConvexPotential("stefan", L=1.0), w0=2.0 * P.w0,
                tolerances={"newton_tol": 1e-14, "max_nl_iter": 0, "max_halvings": 2})
    with pytest.raises(StepFailure):
        solve_evolution(P)


def test_invalid_time_step_rejected():
    with pytest.raises(ValueError):
        heat_problem(dt=0.0)


def test_oscillatory_grid_resolves_eps(stefan_spec):
    P = oscillatory_problem(stefan_spec, 1 / 16)
    assert P.grid.N * P.eps >= 8
