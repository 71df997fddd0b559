import math

import numpy as np
import pytest

from wavelab.errors import ConfigError
from wavelab.harness import (
    CSV_COLUMNS,
    ExperimentConfig,
    Fit,
    Row,
    ScalingReport,
    emit_report,
    fit_rows,
    ladder_gaps,
    read_config,
    read_report_csv,
    report_csv,
    report_text,
    run_experiment,
    single_packet_case,
    write_gaps_csv,
)

HEADER = ",".join(CSV_COLUMNS)


def _cfg(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return ExperimentConfig.load(p)


def test_config_parse(tmp_path):
    cfg = _cfg(tmp_path, """
[experiment]
measurement = preservation
betas = 0.3, 0.2 0.1   # mixed separators
rho_law = power
rho_power = 2
[solver]
method = picard
dtau = 1e-3
slab = 8
[preset]
width = 0.5
""")
    assert cfg.betas == (0.3, 0.2, 0.1)
    assert cfg.points()[1] == (0.2, pytest.approx(0.04))
    assert cfg.solver.method == "picard" and cfg.solver.slab == 8 and cfg.solver.dtau == 1e-3
    assert cfg.preset_params == {"width": 0.5}


@pytest.mark.parametrize("body", [
    "[experiment]\nmeasurement = nonsense\nbetas = 0.3 0.2 0.1\n",
    "[experiment]\nmeasurement = preservation\nbetas = 0.1 0.2 0.3\n",
    "[experiment]\nmeasurement = preservation\nbetas = 0.3 0.2\n",
    "[experiment]\nmeasurement = preservation\nbetas = 0.3 0.2 0.1\nrho_law = cubic\n",
    "[experiment]\nmeasurement = preservation\nbetas = 0.3 0.2 0.1\nM = many\n",
    "[solver]\nmethod = ifrk4\n",
    "measurement = ode\n",
])
def test_config_errors(tmp_path, body):
    with pytest.raises(ConfigError):
        _cfg(tmp_path, body)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        read_config(tmp_path / "absent.ini")


def test_fixed_rho_law():
    cfg = ExperimentConfig("preservation", betas=(0.3, 0.2, 0.1), rho_law="fixed", rho_fixed=0.05)
    assert [r for _, r in cfg.points()] == [0.05] * 3


# fits and reports


def test_fit_recovers_power_law():
    rows = [Row("m", math.nan, x, x, 3 * x**1.5) for x in (0.1, 0.05, 0.02, 0.01)]
    f = fit_rows(rows, "m", 1.5)
    assert f.slope == pytest.approx(1.5) and f.r2 == pytest.approx(1.0) and f.passed
    assert not fit_rows(rows, "m", 2.0).passed


def test_fit_needs_three_finite_points():
    rows = [Row("m", 0.1, 0.1, 0.1, 1.0), Row("m", 0.1, 0.05, 0.05, math.nan), Row("m", 0.1, 0.02, 0.02, 0.3)]
    f = fit_rows(rows, "m", 1.0)
    assert math.isnan(f.slope) and not f.passed and f.npoints == 2


def test_empty_report_is_header_only():
    assert report_csv(ScalingReport()) == HEADER + "\n"
    assert not ScalingReport().passed


def test_report_layout(tmp_path):
    rows = [Row("gap", b, b * b, b * b, b**2) for b in (0.4, 0.3, 0.2, 0.1)]
    rep = ScalingReport(rows, [fit_rows(rows, "gap", 1.0)])
    lines = report_csv(rep).splitlines()
    assert lines[0] == HEADER and len(lines) == 6
    assert lines[1] == "gap,0.4,0.16,0.16,,,,"
    assert lines[-1].startswith("gap,,,,1,") and lines[-1].endswith(",true")
    assert "PASS" in report_text(rep)
    written = emit_report(rep, tmp_path)
    assert sorted(p.name for p in written) == ["gap.dat", "report.csv", "report.txt"]
    assert len(read_report_csv(tmp_path / "report.csv")) == 5
    dat = (tmp_path / "gap.dat").read_text().splitlines()
    assert dat[0].startswith("#") and len(dat) == 5


def test_threshold_fit_text():
    rep = ScalingReport([], [Fit("blowup", 0.0, math.nan, math.nan, math.nan, True, 2)])
    assert report_text(rep) == "blowup: threshold check points=2 PASS\n"


# runs


ODE = ExperimentConfig("ode", rhos=(0.2, 0.1, 0.05), tau_star=0.3)


def test_ode_sweep_is_deterministic():
    a, b = run_experiment(ODE), run_experiment(ODE)
    assert report_csv(a) == report_csv(b)
    assert [f.measurement for f in a.fits] == ["ode_unexcited", "ode_gap"]
    assert len(a.rows) == 6


def test_failed_points_become_empty_rows():
    # a 64-point grid cannot resolve the packets, so every point fails
    cfg = ExperimentConfig("preservation", betas=(0.3, 0.2, 0.1), M=64, dk=0.2)
    rep = run_experiment(cfg)
    assert len(rep.notes) == 3 and "GridTooCoarse" in rep.notes[0]
    assert np.all(np.isnan(rep.values("preservation")))
    assert not rep.passed
    assert report_csv(rep).splitlines()[1] == "preservation,0.3,0.09,,,,,"


def test_blowup_rows():
    cfg = ExperimentConfig("blowup", rhos=(0.1,), M=1024, dk=2 * math.pi / 64)
    rep = run_experiment(cfg)
    (row,) = rep.rows
    assert row.rho == 0.1 and row.value <= 1e-3
    assert rep.passed


def test_ladder_level_validation():
    case = single_packet_case()
    for levels in (["full"], ["full", "exact"]):
        with pytest.raises(ConfigError):
            ladder_gaps(case, 0.2, 0.1, levels)


def test_gaps_csv(tmp_path):
    p = tmp_path / "gaps.csv"
    write_gaps_csv(p, [("full", "interaction", 0.01, 0.1, 1.25e-3)])
    assert p.read_text() == "level_a,level_b,rho,beta,sup_tau_l1_gap\nfull,interaction,0.01,0.1,0.00125\n"
