import csv
import io
import math
import subprocess
import sys

import numpy as np
import pytest

from expint.cli import CONVERGENCE_HEADER, DEFECTS_HEADER, main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_psi_check_res2(capsys):
    code, out, _ = run(capsys, "psi-check", "--scheme", "res2", "--c2", "0.5")
    assert code == 0
    got = {r["condition"]: r["status"] for r in rows(out)}
    assert got == {"psi_1": "PASS", "psi_2": "PASS", "psi_1_2": "PASS"}


def test_psi_check_reports_violations(capsys):
    code, out, _ = run(capsys, "psi-check")
    assert code == 0
    failed = {(r["scheme"], r["condition"]) for r in rows(out) if r["status"] == "FAIL"}
    assert ("dpmpp2", "psi_2") in failed
    assert any(s == "dpmpp3" for s, _ in failed)
    assert not any(s in ("res2", "res3", "expeuler") for s, _ in failed)


def test_convergence_res3(capsys):
    code, out, _ = run(capsys, "convergence", "--scheme", "res3", "--problem", "sin")
    assert code == 0
    assert out.splitlines()[0] == ",".join(CONVERGENCE_HEADER)
    rs = rows(out)
    assert [int(r["n_steps"]) for r in rs] == [8, 16, 32, 64, 128]
    assert abs(float(rs[0]["slope"]) - 3.0) < 0.25


def test_defects_schema_and_determinism(capsys, tmp_path):
    argv = ["defects", "--scheme", "res2,dpmpp2,res2m", "--nfe", "10,20", "--batch", "4"]
    code, out, _ = run(capsys, *argv)
    assert code == 0
    assert out.splitlines()[0] == ",".join(DEFECTS_HEADER)
    rs = rows(out)
    assert len(rs) == 6
    assert [int(r["nfe"]) for r in rs] == [10, 20, 10, 20, 10, 20]
    path = tmp_path / "d.csv"
    assert main(argv + ["--out", str(path)]) == 0
    assert path.read_text(encoding="utf-8") == out
    for r in rs:
        float(r["defect_l1"]), float(r["defect_l2"])


def test_sample_const_one_step(capsys):
    code, out, err = run(capsys, "sample", "--scheme", "expeuler", "--steps", "1", "--problem", "const",
                         "--kappa", "0.5", "--dim", "2", "--x0", "1,2", "--sigma-min", "0.5", "--sigma-max", "2")
    assert code == 0
    last = rows(out)[-1]
    r = math.exp(-math.log(4.0))
    assert float(last["x0"]) == pytest.approx(r * 1 + (1 - r) * 0.5, rel=1e-15)
    assert float(last["x1"]) == pytest.approx(r * 2 + (1 - r) * 0.5, rel=1e-15)
    assert "nfe=1 expected_nfe=1" in err


@pytest.mark.parametrize("scheme, steps, final, nfe", [
    ("res2", 10, False, 20), ("res2", 10, True, 21), ("res3", 5, False, 15), ("res2m", 12, True, 13),
    ("dpmpp3", 4, True, 13), ("heun", 6, False, 12)])
def test_sample_nfe(capsys, scheme, steps, final, nfe):
    argv = ["sample", "--scheme", scheme, "--steps", str(steps)] + (["--final-denoise"] if final else [])
    code, out, err = run(capsys, *argv)
    assert code == 0
    assert f"nfe={nfe} expected_nfe={nfe}" in err
    assert len(rows(out)) == steps + 1 + int(final)


def test_sample_stochastic_reproducible(capsys):
    a = run(capsys, "sample", "--eta", "0.2", "--seed", "4", "--steps", "6", "--batch", "2")[1]
    b = run(capsys, "sample", "--eta", "0.2", "--seed", "4", "--steps", "6", "--batch", "2")[1]
    c = run(capsys, "sample", "--eta", "0.2", "--seed", "5", "--steps", "6", "--batch", "2")[1]
    assert a == b and a != c


def test_eta_sweep(capsys):
    code, out, _ = run(capsys, "eta-sweep", "--eta-list", "0,0.5", "--batch", "32", "--nfe", "10")
    assert code == 0
    rs = rows(out)
    assert [float(r["eta"]) for r in rs] == [0.0, 0.5]


def test_config_file(capsys, tmp_path):
    cfg = tmp_path / "m.cfg"
    cfg.write_text("weights = 0.5 0.5\nmeans = 1 0 ; -1 0\nscales = 0.3 0.3\n")
    code, out, _ = run(capsys, "defects", "--config", str(cfg), "--scheme", "res2", "--nfe", "20", "--batch", "2")
    assert code == 0 and len(rows(out)) == 1


@pytest.mark.parametrize("argv", [
    ["sample", "--scheme", "res2", "--param", "edm"],
    ["sample", "--scheme", "nope"],
    ["sample", "--steps", "3", "--nfe", "6"],
    ["defects", "--config", "/nonexistent/file.cfg"],
    ["sample", "--x0", "1,2"],
    ["convergence", "--problem", "mixture"],
])
def test_usage_errors(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2 and err.startswith("error:")


def test_malformed_config(capsys, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("weights = 1\nmeans = x\nscales = 1\n")
    assert run(capsys, "defects", "--config", str(cfg))[0] == 2


def test_unknown_subcommand():
    proc = subprocess.run([sys.executable, "-m", "expint.cli", "bogus"], capture_output=True, text=True)
    assert proc.returncode != 0


def test_console_script_runs():
    proc = subprocess.run([sys.executable, "-m", "expint.cli", "psi-check", "--scheme", "expeuler"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "psi_1" in proc.stdout


def test_csv_numbers_round_trip(capsys):
    out = run(capsys, "convergence", "--scheme", "res2")[1]
    for r in rows(out):
        assert repr(float(r["error"])) == r["error"]
    assert np.isfinite(float(rows(out)[0]["r2"]))
