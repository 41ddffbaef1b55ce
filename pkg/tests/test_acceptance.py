"""The twelve acceptance criteria at their stated tolerances.

Each test records a one-line verdict that is printed in the terminal summary.
"""
import json
import math
import time

import numpy as np
import pytest

from stefan_homog import grid as G
from stefan_homog.cell import (DissipationPotential, cell_grid_for, homogenize_matrix,
                               minimize_cell_functional)
from stefan_homog.cli import main
from stefan_homog.config import parse_config
from stefan_homog.convex import ConvexPotential
from stefan_homog.diagnostics import two_scale_pairing
from stefan_homog.fields import MatrixField, OscillatoryField, ergodicity_defect

TWO_PI = 2.0 * math.pi
SQRT3 = math.sqrt(3.0)


def k_sin(dim=1):
    return OscillatoryField.sinusoid(2.0, 1.0, (TWO_PI,) + (0.0,) * (dim - 1))


@pytest.fixture(scope="module")
def converge_runs(tmp_path_factory, configs_dir):
    """Criterion 7 run twice into separate directories, with wall-clock times."""
    out = []
    for tag in ("first", "second"):
        d = tmp_path_factory.mktemp(f"converge_{tag}")
        t0 = time.perf_counter()
        code = main(["converge", "--config", str(configs_dir / "stefan.json"), "--out", str(d)])
        out.append((code, d, time.perf_counter() - t0))
    return out


def read_table(path):
    lines = path.read_text().splitlines()
    head = lines[0].split(",")
    return [dict(zip(head, map(float, ln.split(",")))) for ln in lines[1:]]


def test_criterion_01_effective_coefficient_1d(criterion):
    t0 = time.perf_counter()
    K0, _, _ = homogenize_matrix(MatrixField.scalar(k_sin()), 1024)
    dt = time.perf_counter() - t0
    err = abs(K0[0, 0] - SQRT3)
    ok = criterion(1, err <= 1e-6 and dt < 1.0, f"|K0 - sqrt3| = {err:.2e}, {dt:.3f} s")
    assert ok


def test_criterion_02_laminate_2d(criterion):
    k = k_sin(2)
    two = OscillatoryField.constant_field(2.0, 2)
    zero = OscillatoryField.constant_field(0.0, 2)
    t0 = time.perf_counter()
    K0, _, _ = homogenize_matrix(MatrixField(((k, zero), (zero, two))), 256)
    dt = time.perf_counter() - t0
    err = float(np.max(np.abs(K0 - np.diag([SQRT3, 2.0]))))
    ok = criterion(2, err <= 1e-4 and dt < 30.0, f"max |K0 - diag(sqrt3, 2)| = {err:.2e}, {dt:.2f} s")
    assert ok


def test_criterion_03_constant_coefficient(criterion):
    worst_K, worst_W = 0.0, 0.0
    for K in (np.array([[2.5]]), np.array([[3.0, 0.7], [0.7, 1.2]]), np.diag([0.3, 4.0])):
        K0, corr, _ = homogenize_matrix(MatrixField.constant_matrix(K), 64)
        worst_K = max(worst_K, float(np.max(np.abs(K0 - K))))
        worst_W = max(worst_W, max(float(np.max(np.abs(W))) for W in corr.W))
    ok = criterion(3, worst_K <= 1e-10 and worst_W <= 1e-10,
                   f"max |K0 - K| = {worst_K:.1e}, max |W| = {worst_W:.1e}")
    assert ok


def test_criterion_04_psi0_quadratic(criterion):
    K = MatrixField.scalar(k_sin())
    cg, Kr, _ = cell_grid_for(K, 1024)
    K0, _, _ = homogenize_matrix(K, 1024)
    psi = DissipationPotential("quadratic", K=Kr)
    errs = []
    for eta in (-2.0, -0.5, 0.25, 1.0, 3.0):
        val = minimize_cell_functional(cg, psi, [eta], gtol=1e-10).value
        errs.append(abs(2.0 * val - K0[0, 0] * eta * eta))
    ok = criterion(4, max(errs) <= 1e-6, f"max |2 psi0 - K0 eta^2| = {max(errs):.2e}")
    assert ok


def test_criterion_05_convex_toolkit(criterion):
    lattice = np.linspace(-5.0, 5.0, 100)
    gaps = []
    for P in (ConvexPotential("quadratic", a=2.0), ConvexPotential("stefan", L=1.0)):
        for where in ("lo", "mid", "hi"):
            w = P.selection(lattice, where=where)
            gaps.append(float(np.max(np.abs(P.value(lattice) + P.conjugate(w) - lattice * w))))
    w = np.linspace(-4.0, 5.0, 100)
    closed = 0.5 * np.minimum(w, 0.0) ** 2 + 0.5 * np.maximum(w - 1.0, 0.0) ** 2
    conj = float(np.max(np.abs(ConvexPotential("stefan", L=1.0).conjugate(w) - closed)))
    ok = criterion(5, max(gaps) <= 1e-8 and conj <= 1e-8,
                   f"max Fenchel gap = {max(gaps):.1e}, Stefan conjugate error = {conj:.1e}")
    assert ok


def test_criterion_06_heat_decay(criterion, tmp_path, configs_dir):
    code = main(["solve", "--config", str(configs_dir / "heat.json"), "--eps", "homogenized",
                 "--out", str(tmp_path)])
    u = G.read_binary(tmp_path / "u_final.bin")
    mid = u.values[u.grid.N // 2]
    err = abs(mid - math.exp(-math.pi ** 2 * 0.1))
    ok = criterion(6, code == 0 and u.grid.N == 128 and err <= 2e-2,
                   f"u(1/2, 0.1) = {mid:.5f}, error {err:.2e}")
    assert ok


def test_criterion_07_stefan_convergence(criterion, converge_runs):
    code, out, seconds = converge_runs[0]
    rows = read_table(out / "convergence.csv")
    errs = [r["err_l1"] for r in rows]
    eps = [r["eps"] for r in rows]
    monotone = all(b <= 1.1 * a for a, b in zip(errs, errs[1:]))
    ratio = errs[-1] / errs[0]
    ok = criterion(7, eps == [1 / 8, 1 / 16, 1 / 32, 1 / 64] and monotone and ratio <= 0.25
                   and seconds < 300 and code == 0,
                   "L1 errors " + ", ".join(f"{e:.3e}" for e in errs)
                   + f"; final/first = {ratio:.3f}; {seconds:.1f} s")
    assert ok


def test_criterion_08_uniform_bounds(criterion, converge_runs):
    _, out, _ = converge_runs[0]
    sup = [r["sup_l2_w"] for r in read_table(out / "convergence.csv")]
    runs = json.loads((out / "converge.json").read_text())["report"]["runs"]
    slack = min(r["min_bound_slack"] for r in runs)
    band = max(sup) / min(sup)
    ok = criterion(8, band <= 3.0 and slack >= -1e-6,
                   f"sup ||w|| band = {band:.3f}, min energy slack = {slack:.3e}")
    assert ok


def test_criterion_09_contraction(criterion, tmp_path, configs_dir):
    code = main(["unique", "--config", str(configs_dir / "stefan.json"), "--out", str(tmp_path)])
    rep = json.loads((tmp_path / "unique.json").read_text())["report"]
    rel = rep["max_increment"] / rep["E0"]
    ok = criterion(9, code == 0 and rep["checks"]["nonincreasing"]
                   and rep["checks"]["identical_data_zero"] and rel <= 1e-8,
                   f"max increment / E(0) = {rel:.2e}, identical data zero = "
                   f"{rep['checks']['identical_data_zero']}")
    assert ok


def test_criterion_10_two_scale_pairing(criterion):
    eps = 1 / 64
    grid = G.DomainGrid(1, 64 * 64)
    v = np.sin(TWO_PI * grid.coords() / eps)
    s = two_scale_pairing(grid, v, eps, OscillatoryField.sinusoid(0.0, 1.0, TWO_PI))
    c = two_scale_pairing(grid, v, eps, OscillatoryField.sinusoid(0.0, 1.0, TWO_PI, waveform="cosine"))
    ok = criterion(10, abs(s - 0.5) <= 1e-2 and abs(c) <= 1e-2,
                   f"pairing with sin = {s:.6f}, with cos = {c:.1e}")
    assert ok


def test_criterion_11_ergodicity_defect(criterion, configs_dir):
    d = ergodicity_defect(OscillatoryField.sinusoid(0.0, 1.0, 1.0), math.pi / 2, 1000.0)
    qp = parse_config(configs_dir / "quasiperiodic.json").flux.K.entry(0, 0)
    seq = [ergodicity_defect(qp, t, 1000.0) for t in (10.0, 100.0, 1000.0)]
    err = abs(d - 2.0 / math.pi ** 2)
    ok = criterion(11, err <= 1e-3 and seq[0] > seq[1] > seq[2],
                   f"defect error {err:.1e}; quasi-periodic " + ", ".join(f"{v:.2e}" for v in seq))
    assert ok


def test_criterion_12_determinism(criterion, converge_runs):
    (_, a, _), (_, b, _) = converge_runs
    same = (a / "convergence.csv").read_bytes() == (b / "convergence.csv").read_bytes()
    ok = criterion(12, same, "convergence.csv byte-identical" if same else "CSV outputs differ")
    assert ok
