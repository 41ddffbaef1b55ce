import json
import subprocess
import sys

import pytest

from stefan_homog import grid as G
from stefan_homog.cli import main


def run(tmp_path, *args, sub="out"):
    out = tmp_path / sub
    code = main([*args, "--out", str(out)])
    return code, out


def report(out, cmd):
    return json.loads((out / f"{cmd}.json").read_text())


def test_validate_pass_and_fail(tmp_path, configs_dir):
    code, out = run(tmp_path, "validate", "--config", str(configs_dir / "stefan.json"))
    assert code == 0 and report(out, "validate")["passed"]
    code, out = run(tmp_path, "validate", "--config", str(configs_dir / "pme.json"), sub="pme")
    assert code == 1 and not report(out, "validate")["passed"]


def test_mean_reports_every_field(tmp_path, configs_dir):
    code, out = run(tmp_path, "mean", "--config", str(configs_dir / "quasiperiodic.json"))
    rep = report(out, "mean")["report"]
    assert code == 0 and "flux.K[0][0]" in rep["fields"]
    d = rep["fields"]["flux.K[0][0]"]["ergodicity_defect"]
    assert d["10.0"] > d["100.0"] > d["1000.0"]


def test_cell_writes_correctors(tmp_path, configs_dir):
    code, out = run(tmp_path, "cell", "--config", str(configs_dir / "stefan.json"))
    assert code == 0
    K0 = report(out, "cell")["report"]["K0"]
    assert K0[0][0] == pytest.approx(3 ** 0.5, abs=1e-6)
    f = G.read_binary(out / "corrector_0.bin")
    assert abs(f.values.mean()) < 1e-12
    assert (out / "timings.json").exists()


def test_psi0_table(tmp_path, configs_dir):
    code, out = run(tmp_path, "psi0", "--config", str(configs_dir / "nonlinear.json"))
    assert code == 0 and (out / "psi0_table.csv").read_text().startswith("eta,psi0,dpsi0")


def test_psi0_rejects_linear_flux(tmp_path, configs_dir, capsys):
    code, _ = run(tmp_path, "psi0", "--config", str(configs_dir / "stefan.json"))
    assert code == 1
    assert json.loads(capsys.readouterr().out.strip().splitlines()[-1])["status"] == "error"


def test_solve_oscillatory_and_homogenized(tmp_path, configs_dir):
    code, out = run(tmp_path, "solve", "--config", str(configs_dir / "stefan.json"), "--eps", "0.125")
    rep = report(out, "solve")["report"]
    assert code == 0 and rep["eps"] == 0.125 and rep["N"] == 128
    assert rep["min_bound_slack"] >= -1e-6
    code, out = run(tmp_path, "solve", "--config", str(configs_dir / "heat.json"),
                    "--eps", "homogenized", sub="hom")
    assert code == 0 and (out / "u_final.bin").exists()
    lines = (out / "trajectory.csv").read_bytes().split(b"\r\n")
    assert lines[0] == b"t,l2_w,energy,nl_iters,residual"


def test_converge_is_byte_reproducible(tmp_path, configs_dir):
    args = ("converge", "--config", str(configs_dir / "stefan.json"), "--eps", "0.25", "0.125")
    c1, o1 = run(tmp_path, *args, sub="a")
    c2, o2 = run(tmp_path, *args, sub="b")
    assert c1 == c2
    for name in ("convergence.csv", "converge.json"):
        assert (o1 / name).read_bytes() == (o2 / name).read_bytes()


def test_unique_contraction(tmp_path, configs_dir):
    code, out = run(tmp_path, "unique", "--config", str(configs_dir / "stefan.json"), "--grid", "256")
    rep = report(out, "unique")["report"]
    assert code == 0 and rep["checks"]["identical_data_zero"] and rep["E_final"] < rep["E0"]


def test_bad_inputs_exit_one(tmp_path, configs_dir, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": "x",\n "domain": {"dim": 3}}')
    code, _ = run(tmp_path, "validate", "--config", str(bad))
    assert code == 1
    msg = json.loads(capsys.readouterr().out.strip())
    assert msg["status"] == "error" and msg["errors"][0]["line"] is not None
    code, _ = run(tmp_path, "solve", "--config", str(configs_dir / "stefan.json"), "--eps", "-1")
    assert code == 1
    code, _ = run(tmp_path, "solve", "--config", str(tmp_path / "missing.json"))
    assert code == 1


def test_unknown_subcommand_exits_two():
    proc = subprocess.run([sys.executable, "-m", "stefan_homog.cli", "frobnicate", "--config", "x"],
                          capture_output=True)
    assert proc.returncode == 2
