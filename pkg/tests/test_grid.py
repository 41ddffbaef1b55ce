import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stefan_homog import grid as G
from stefan_homog.evolution import LinearFlux


def test_domain_grid_geometry():
    g = G.DomainGrid(2, 8)
    assert g.shape == (9, 9) and g.size == 81
    assert g.interior_index().size == 49
    assert g.weights().sum() == pytest.approx(1.0)


def test_cell_grid_rejects_coarse_grids():
    with pytest.raises(ValueError):
        G.CellGrid(1, 4)


@pytest.mark.parametrize("dim", [1, 2])
def test_lp_norm_of_sine(dim):
    g = G.DomainGrid(dim, 64)
    X = g.coords()
    f = np.sin(math.pi * X) if dim == 1 else np.sin(math.pi * X[..., 0]) * np.sin(math.pi * X[..., 1])
    assert G.lp_norm(g, f, 2.0) == pytest.approx(0.5 ** (dim / 2), abs=1e-12)
    assert G.lp_norm(g, np.ones(g.shape), 3.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        G.lp_norm(g, f, 0.5)


def test_gradient_second_order():
    errs = []
    for N in (32, 64):
        g = G.DomainGrid(1, N)
        x = g.coords()
        df = G.gradient(g, G.GridField(np.sin(math.pi * x), g)).values[..., 0]
        errs.append(np.max(np.abs(df[1:-1] - math.pi * np.cos(math.pi * x[1:-1]))))
    assert errs[1] < errs[0] / 3.5


@pytest.mark.parametrize("dim", [1, 2])
def test_divergence_is_negative_adjoint_of_gradient(dim):
    rng = np.random.default_rng(0)
    g = G.DomainGrid(dim, 12)
    f = rng.standard_normal(g.shape) * g.interior_mask()
    F = rng.standard_normal(g.shape + (dim,))
    lhs = G.inner(g, G.gradient(g, G.GridField(f, g)).values, F)
    rhs = -G.inner(g, f, G.divergence(g, G.GridField(F, g)).values)
    assert lhs == pytest.approx(rhs, abs=1e-11)


@pytest.mark.parametrize("dim", [1, 2])
def test_flux_operator_symmetric_and_annihilates_constants(dim):
    g = G.DomainGrid(dim, 10)
    K = np.array([[2.0]]) if dim == 1 else np.array([[2.0, 0.3], [0.3, 1.0]])
    A = LinearFlux(g, K).A
    assert abs(A - A.T).max() < 1e-12
    assert np.max(np.abs(A @ np.ones(g.size))) < 1e-9


def test_non_symmetric_coefficient_rejected():
    g = G.DomainGrid(2, 6)
    with pytest.raises(ValueError):
        G.flux_operator(g, np.array([[1.0, 0.5], [0.0, 1.0]]))


@settings(max_examples=25, deadline=None)
@given(arrays(float, 31, elements=st.floats(-1, 1)))
def test_interior_operator_positive(v):
    g = G.DomainGrid(1, 32)
    A = G.interior_operator(g, LinearFlux(g, 1.5).A)
    assert float(v @ (A @ v)) >= -1e-12


def test_hminus1_norm_of_sine():
    # A phi = sin(pi x) with A = -d2/dx2 gives phi = sin(pi x) / pi^2 and energy 1 / (2 pi^2)
    vals = []
    for N in (64, 128):
        g = G.DomainGrid(1, N)
        A = G.interior_operator(g, LinearFlux(g, 1.0).A)
        x = g.coords()[g.interior_index()]
        vals.append(G.hminus1_norm(g, np.sin(math.pi * x), A))
    exact = 1.0 / (2.0 * math.pi ** 2)
    assert abs(vals[1] - exact) < 1e-5
    assert abs(vals[1] - exact) < abs(vals[0] - exact) / 3.5
    g = G.DomainGrid(1, 64)
    A = G.interior_operator(g, LinearFlux(g, 1.0).A)
    assert G.hminus1_norm(g, np.zeros(63), A) == 0.0


def test_hminus1_scales_inversely_with_coefficient():
    g = G.DomainGrid(1, 32)
    x = g.coords()[g.interior_index()]
    f = np.sin(math.pi * x) + 0.3 * np.sin(3 * math.pi * x)
    a1 = G.hminus1_norm(g, f, G.interior_operator(g, LinearFlux(g, 1.0).A))
    a4 = G.hminus1_norm(g, f, G.interior_operator(g, LinearFlux(g, 4.0).A))
    assert a1 == pytest.approx(4.0 * a4, rel=1e-12)


def test_pcg_solves_spd_system():
    rng = np.random.default_rng(1)
    B = rng.standard_normal((20, 20))
    A = B @ B.T + 20 * np.eye(20)
    b = rng.standard_normal(20)
    x, its, res = G.pcg(A, b, rtol=1e-12)
    assert np.allclose(A @ x, b, atol=1e-9) and res <= 1e-12


def test_pcg_reports_non_convergence():
    A = sp.diags(np.linspace(1, 1e6, 200))
    with pytest.raises(G.ConvergenceError):
        G.pcg(A, np.ones(200), rtol=1e-14, maxiter=5)


def test_fft_preconditioner_inverts_periodic_laplacian():
    g = G.CellGrid(1, 32)
    apply = G.fft_laplace_preconditioner(g)
    D = G.face_difference(g, 0)
    L = (D.T @ D).toarray()
    r = G.zero_mean(np.random.default_rng(2).standard_normal(32))
    assert np.allclose(L @ apply(r), r, atol=1e-10)


def test_helmholtz_parts_are_orthogonal():
    g = G.CellGrid(2, 32)
    X = g.coords()
    z1, z2 = X[..., 0] * 2 * math.pi, X[..., 1] * 2 * math.pi
    grad_part = np.stack([np.cos(z1) * np.sin(z2), np.sin(z1) * np.cos(z2)], axis=-1)
    curl_part = np.stack([np.sin(z2), -np.sin(z1)], axis=-1) * 0.5
    F = G.GridField(grad_part + curl_part + np.array([0.2, -0.1]), g)
    pot, sol, mean, _ = G.helmholtz_decompose(g, F)
    assert np.allclose(mean, [0.2, -0.1])
    assert abs(G.inner(g, pot.values, sol.values)) < 1e-10
    recon = pot.values + sol.values + mean
    assert np.allclose(recon, F.values, atol=1e-12)


@pytest.mark.parametrize("grid", [G.DomainGrid(1, 16), G.DomainGrid(2, 5), G.CellGrid(2, 8, 2.0)])
def test_binary_round_trip(tmp_path, grid):
    vals = np.random.default_rng(3).standard_normal(grid.shape)
    G.write_binary(tmp_path / "f.bin", G.GridField(vals, grid))
    back = G.read_binary(tmp_path / "f.bin")
    assert np.array_equal(back.values.ravel(), vals.ravel())


def test_csv_dump_format(tmp_path):
    g = G.DomainGrid(1, 4)
    G.write_csv(tmp_path / "f.csv", G.GridField(g.coords() ** 2, g))
    raw = (tmp_path / "f.csv").read_bytes()
    lines = raw.decode().split("\r\n")
    assert lines[0] == "x,value" and lines[2] == "0.25,0.0625" and raw.endswith(b"\r\n")
