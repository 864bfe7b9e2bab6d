import subprocess
import sys

import numpy as np
import pytest

from stochbt.cli import main
from stochbt.sysmodel import load_system


def _cfg(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return str(path)


def test_dry_run(tmp_path, capsys):
    assert main(["experiment", "table1", "--dry-run", "--seed", "7", "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("# seed=7 ") and "configuration ok" in out
    assert not (tmp_path / "o").exists()


def test_invalid_config(tmp_path, capsys):
    assert main(["bound", "--config", _cfg(tmp_path, "bogus = 1\n")]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_benchmark_command(tmp_path, capsys):
    cfg = _cfg(tmp_path, "n = 100\nq = 2\nrho = 0.5\n")
    assert main(["benchmark", "--config", cfg, "--out", str(tmp_path)]) == 0
    sys_ = load_system(tmp_path / "system.txt")
    assert sys_.A[0, 0] == pytest.approx(2.2, abs=1e-14)
    np.testing.assert_array_equal(sys_.K, [[1.0, 0.5], [0.5, 1.0]])
    assert "unstable modes" in capsys.readouterr().out


def test_large_benchmark_nests(tmp_path):
    assert main(["benchmark", "--out", str(tmp_path / "a")]) == 0
    big = _cfg(tmp_path, "n = 1000\n")
    assert main(["benchmark", "--config", big, "--out", str(tmp_path / "b")]) == 0
    a, b = load_system(tmp_path / "a" / "system.txt"), load_system(tmp_path / "b" / "system.txt")
    np.testing.assert_array_equal(a.A, b.A[:100, :100])
    np.testing.assert_array_equal(a.N[0], b.N[0][:100, :100])
    np.testing.assert_array_equal(a.C, b.C[:, :100])


def test_pipeline_commands(tmp_path):
    cfg = _cfg(tmp_path, "n = 10\npaths = 40\nsteps = 100\norders = 2,4\n")
    out = str(tmp_path / "o")
    for cmd in ("gramians", "reduce", "bound", "simulate"):
        assert main([cmd, "--config", cfg, "--out", out]) == 0
    names = {p.name for p in (tmp_path / "o").iterdir()}
    assert {"gramians.txt", "hsv.csv", "rom_r2.txt", "bound.csv", "simulate.csv", "profile_r4.csv"} <= names
    assert (tmp_path / "o" / "bound.csv").read_text().startswith(
        "r,eps,term_hsv,term_cov_cross,term_cov_diag,agreement_residual\n2,")
    first = (tmp_path / "o" / "simulate.csv").read_bytes()
    assert main(["simulate", "--config", cfg, "--out", out]) == 0
    assert (tmp_path / "o" / "simulate.csv").read_bytes() == first


def test_stage_failure_named(tmp_path, capsys):
    cfg = _cfg(tmp_path, f"system = {tmp_path / 'missing.txt'}\n")
    assert main(["gramians", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "stage 'gramians' failed" in capsys.readouterr().err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "stochbt", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "experiment" in res.stdout
