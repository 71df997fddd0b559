from pathlib import Path

import pytest

from wavelab.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_resonance_csv_is_byte_identical(tmp_path, capsys):
    outs = []
    for d in ("a", "b"):
        code, cap = _run(capsys, "resonance", "--config", CONFIGS / "resonance_counter.ini", "--out", tmp_path / d,
                         "--format", "csv")
        assert code == 0
        outs.append((tmp_path / d / "resonance.csv").read_bytes())
        assert cap.out.encode() == outs[-1]
    assert outs[0] == outs[1]
    lines = outs[0].decode().splitlines()
    assert lines[0] == "m,zeta,n,string,delta,kappa,k_out,kind,mismatch"
    assert {line.split(",")[7] for line in lines[1:]} <= {"universal", "internal", "external"}


def test_resonance_summary_for_second_harmonic(tmp_path, capsys):
    code, cap = _run(capsys, "resonance", "--config", CONFIGS / "resonance_shg.ini", "--out", tmp_path)
    assert code == 0
    assert "resonance invariant: False" in cap.out
    assert "closure: 1:0.7071067812 1:1.414213562" in cap.out


def test_resonance_summary_when_closure_does_not_settle(tmp_path, capsys):
    cfg = tmp_path / "third.ini"
    cfg.write_text("[band]\nkind = nls\ngamma0 = 1\ngamma2 = 1\n[resonance]\npairs = 1:0.5773502691896258\norders = 3\n")
    code, cap = _run(capsys, "resonance", "--config", cfg, "--out", tmp_path)
    assert code == 0
    assert "resonance invariant: False" in cap.out


def test_ode_sweep_and_report(tmp_path, capsys):
    cfg = tmp_path / "ode.ini"
    cfg.write_text("[experiment]\nmeasurement = ode\nrhos = 0.2 0.1 0.05\ntau_star = 0.3\n")
    code, cap = _run(capsys, "sweep", "--config", cfg, "--out", tmp_path / "o", "--format", "csv")
    assert code in (0, 1)
    assert cap.out.startswith("measurement,beta,rho,value")
    code, cap = _run(capsys, "report", "--config", cfg, "--out", tmp_path / "o")
    assert code == 0
    assert cap.out.splitlines()[0].startswith("ode_unexcited: slope=")


def test_simulate_writes_diagnostics(tmp_path, capsys):
    cfg = tmp_path / "toy.ini"
    cfg.write_text("[experiment]\nmeasurement = blowup\npreset = toy\nrhos = 0.1\nM = 512\n"
                   "dk = 0.09817477042468103\n")
    code, cap = _run(capsys, "simulate", "--config", cfg, "--out", tmp_path)
    assert code == 0 and cap.out.startswith("steps=")
    assert (tmp_path / "diagnostics.csv").read_text().startswith("tau,l1_norm,residual,iterations")
    assert (tmp_path / "final_field.txt").read_text().startswith("# kgrid 1 512")


@pytest.mark.parametrize("body", [
    "[experiment]\nmeasurement = nonsense\n",
    "[band]\nkind = nls\n",
    "[band]\nkind = maxwell\n[resonance]\npairs = 1:0.5\n",
    "[band]\nkind = two_speed\nc1 = 1\n[resonance]\npairs = 1:0.5\n",
])
def test_errors_exit_with_code_2(tmp_path, capsys, body):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(body)
    command = "sweep" if "experiment" in body else "resonance"
    code, cap = _run(capsys, command, "--config", cfg, "--out", tmp_path)
    assert code == 2 and cap.err.startswith("wavelab: ")


def test_missing_config_exits_with_code_2(tmp_path, capsys):
    code, cap = _run(capsys, "sweep", "--config", tmp_path / "nope.ini")
    assert code == 2 and "ConfigError" in cap.err
