"""Experiment orchestration: configs, sweeps, slope fits and report files.

Config files are INI-style (``[section]`` headers, ``key = value`` lines,
``#`` comments) and are read with :mod:`configparser`.  See
``docs/config.md`` for the keys.
"""

from __future__ import annotations

import configparser
import csv
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, WavelabError
from .fields import (
    EPS_DEFAULT,
    KGrid,
    WavepacketSpec,
    l1,
    loglog_fit,
    scaled_gaussian,
    synthesize_multiwavepacket,
    windowed_sum,
)
from .models import (
    CoupledNLSParams,
    coupled_nls_reference,
    nls_grid,
    ode4_case,
    ode_average_compare,
    single_nls,
    toy_oracle_error,
    toy_preset,
)
from .reduced import (
    InteractionSystem,
    MinimalSystem,
    MinimalSystemSpec,
    ScalarSystem,
    eta_grid_for,
    full_vs_interaction,
    labels,
    minimal_initial,
    rescale_amplitudes,
    solve_reduced,
    sup_gap,
)
from .resonance import NKSpectrum
from .solver import EvolutionProblem, SolverConfig, solve_integrated

log = logging.getLogger(__name__)

MEASUREMENTS = ("preservation", "superposition", "nls_approx", "ode", "blowup")
SLOPE_FACTOR = 0.8
R2_MIN = 0.95
CSV_COLUMNS = ("measurement", "beta", "rho", "value", "slope", "intercept", "r2", "pass")


# ---------------------------------------------------------------------------
# config


def _floats(text: str) -> list:
    return [float(x) for x in text.replace(",", " ").split()]


@dataclass
class ExperimentConfig:
    measurement: str
    preset: str = ""
    betas: tuple = ()
    rhos: tuple = ()
    rho_law: str = "power"
    rho_coeff: float = 1.0
    rho_power: float = 2.0
    rho_fixed: float = 0.1
    tau_star: float = 0.5
    eps: float = EPS_DEFAULT
    M: int = 4096
    dk: float = 0.0025
    seed: int = 0
    out_dir: str = "out"
    order: float = 1.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    preset_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.measurement not in MEASUREMENTS:
            raise ConfigError(f"measurement must be one of {MEASUREMENTS}, got {self.measurement!r}")
        if self.rho_law not in ("fixed", "power"):
            raise ConfigError(f"rho law must be 'fixed' or 'power', got {self.rho_law!r}")
        if self.betas:
            b = list(self.betas)
            if b != sorted(b, reverse=True):
                raise ConfigError("beta list must be sorted in descending order")
        n = len(self.rhos) if self.measurement in ("ode", "blowup") else len(self.betas)
        if self.measurement != "blowup" and n < 3:
            raise ConfigError("a slope fit needs at least 3 sweep points")

    def rho_of(self, beta: float) -> float:
        if self.rho_law == "fixed":
            return self.rho_fixed
        return self.rho_coeff * beta**self.rho_power

    def points(self) -> list:
        if self.measurement in ("ode", "blowup"):
            return [(math.nan, float(r)) for r in self.rhos]
        return [(float(b), self.rho_of(b)) for b in self.betas]

    @classmethod
    def from_parser(cls, cp: configparser.ConfigParser) -> "ExperimentConfig":
        if not cp.has_section("experiment"):
            raise ConfigError("config needs an [experiment] section")
        e = cp["experiment"]
        s = cp["solver"] if cp.has_section("solver") else {}
        solver = SolverConfig(
            method=s.get("method", "ifrk4"),
            dtau=float(s["dtau"]) if "dtau" in s else None,
            picard_tol=float(s.get("picard_tol", 1e-10)),
            slab=int(s.get("slab", 64)),
            quadrature=s.get("quadrature", "rectangle"),
            save_every=int(s.get("save_every", 1)),
        )
        pp = {}
        if cp.has_section("preset"):
            for k, v in cp["preset"].items():
                try:
                    pp[k] = float(v)
                except ValueError:
                    pp[k] = v
        try:
            return cls(
                measurement=e.get("measurement", ""),
                preset=e.get("preset", ""),
                betas=tuple(_floats(e.get("betas", ""))),
                rhos=tuple(_floats(e.get("rhos", ""))),
                rho_law=e.get("rho_law", "power"),
                rho_coeff=float(e.get("rho_coeff", 1.0)),
                rho_power=float(e.get("rho_power", 2.0)),
                rho_fixed=float(e.get("rho_fixed", 0.1)),
                tau_star=float(e.get("tau_star", 0.5)),
                eps=float(e.get("eps", EPS_DEFAULT)),
                M=int(e.get("M", 4096)),
                dk=float(e.get("dk", 0.0025)),
                seed=int(e.get("seed", 0)),
                out_dir=e.get("out", "out"),
                order=float(e.get("order", 1.0)),
                solver=solver,
                preset_params=pp,
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        cp = read_config(path)
        return cls.from_parser(cp)


def read_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return cp


# ---------------------------------------------------------------------------
# reports


@dataclass
class Row:
    measurement: str
    beta: float
    rho: float
    x: float
    value: float


@dataclass
class Fit:
    measurement: str
    order: float
    slope: float
    intercept: float
    r2: float
    passed: bool
    npoints: int


@dataclass
class ScalingReport:
    rows: list = field(default_factory=list)
    fits: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def fit(self, measurement: str) -> Fit:
        for f in self.fits:
            if f.measurement == measurement:
                return f
        raise KeyError(measurement)

    def values(self, measurement: str) -> np.ndarray:
        return np.array([r.value for r in self.rows if r.measurement == measurement])

    @property
    def passed(self) -> bool:
        return bool(self.fits) and all(f.passed for f in self.fits)


def fit_rows(rows: Sequence[Row], measurement: str, order: float, factor: float = SLOPE_FACTOR,
             r2_min: float = R2_MIN) -> Fit:
    """Log-log fit of value against x; passes when slope >= factor * order and R^2 >= r2_min."""
    pts = [(r.x, r.value) for r in rows if r.measurement == measurement
           and np.isfinite(r.value) and r.value > 0 and np.isfinite(r.x) and r.x > 0]
    if len(pts) < 3:
        return Fit(measurement, order, math.nan, math.nan, math.nan, False, len(pts))
    x, y = np.array(pts).T
    slope, icpt, r2 = loglog_fit(x, y)
    return Fit(measurement, order, slope, icpt, r2, bool(slope >= factor * order and r2 >= r2_min), len(pts))


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    return f"{v:.10g}"


def report_csv(report: ScalingReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    names = []
    for r in report.rows:
        if r.measurement not in names:
            names.append(r.measurement)
    for f in report.fits:
        if f.measurement not in names:
            names.append(f.measurement)
    for name in names:
        for r in report.rows:
            if r.measurement == name:
                w.writerow([name, _fmt(r.beta), _fmt(r.rho), _fmt(r.value), "", "", "", ""])
        for f in report.fits:
            if f.measurement == name:
                w.writerow([name, "", "", "", _fmt(f.slope), _fmt(f.intercept), _fmt(f.r2), _fmt(f.passed)])
    return buf.getvalue()


def report_text(report: ScalingReport) -> str:
    lines = []
    for f in report.fits:
        status = "PASS" if f.passed else "FAIL"
        if math.isnan(f.slope) and f.order == 0:
            lines.append(f"{f.measurement}: threshold check points={f.npoints} {status}")
            continue
        lines.append(f"{f.measurement}: slope={_fmt(f.slope)} (need >= {SLOPE_FACTOR * f.order:.3g}) "
                     f"r2={_fmt(f.r2)} points={f.npoints} {status}")
    lines.extend(f"note: {n}" for n in report.notes)
    return "\n".join(lines) + "\n"


def emit_report(report: ScalingReport, out_dir) -> list:
    """Write report.csv, report.txt and one <measurement>.dat per measurement."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    p = out / "report.csv"
    p.write_text(report_csv(report), encoding="utf-8")
    written.append(p)
    p = out / "report.txt"
    p.write_text(report_text(report), encoding="utf-8")
    written.append(p)
    names = sorted({r.measurement for r in report.rows})
    for name in names:
        lines = ["# log10_x log10_value"]
        for r in report.rows:
            if r.measurement == name and r.x > 0 and r.value > 0 and np.isfinite(r.value):
                lines.append(f"{math.log10(r.x):.10g} {math.log10(r.value):.10g}")
        p = out / f"{name}.dat"
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(p)
    return written


def read_report_csv(path) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# measurements


def preservation_gap(cfg: ExperimentConfig, beta: float, rho: float) -> float:
    """sup_tau ||u - sum_l window_l(u)||_L1 for the single-wavepacket preset."""
    case = single_nls(**_kw(cfg.preset_params, ("k_star", "width", "amplitude")), eps=cfg.eps)
    grid = KGrid(cfg.M, cfg.dk)
    pr = case.problem(beta, rho, grid, cfg.tau_star)
    traj = solve_integrated(pr, cfg.solver)
    return float(max(l1(u - windowed_sum(u, case.S, beta, cfg.eps, case.bs, grid), grid) for u in traj.states))


def nls_approx_gap(cfg: ExperimentConfig, beta: float, rho: float) -> float:
    """sup_tau ||u - sum_l w_l||_L1 between the full problem and its interaction system."""
    case = single_nls(**_kw(cfg.preset_params, ("k_star", "width", "amplitude")), eps=cfg.eps)
    grid = KGrid(cfg.M, cfg.dk)
    pr = case.problem(beta, rho, grid, cfg.tau_star)
    full = solve_integrated(pr, cfg.solver)
    sysi = InteractionSystem(pr, case.S, beta, cfg.eps)
    return full_vs_interaction(pr, full, sysi, solve_reduced(sysi, cfg.solver))


def superposition_gap(cfg: ExperimentConfig, beta: float, rho: float) -> float:
    kw = {}
    for key in ("c12", "c22"):
        if key in cfg.preset_params:
            kw[key] = complex(cfg.preset_params[key])
    base = CoupledNLSParams()
    c = (kw.get("c12", 0.0), kw.get("c22", 0.0))
    p = replace(base, c=c, beta=beta, rho=rho, tau_star=cfg.tau_star)
    bundle = coupled_nls_reference(p, nls_grid(p), "superposition")
    return bundle.run(cfg.solver)


def _kw(params: dict, keys: Sequence[str]) -> dict:
    return {k: params[k] for k in keys if k in params}


def _measure_point(args):
    cfg, beta, rho = args
    fn = {"preservation": preservation_gap, "nls_approx": nls_approx_gap,
          "superposition": superposition_gap}[cfg.measurement]
    try:
        return fn(cfg, beta, rho), None
    except (WavelabError, FloatingPointError, ValueError) as exc:
        return math.nan, f"{cfg.measurement} beta={beta} rho={rho}: {type(exc).__name__}: {exc}"


def workers() -> int:
    try:
        return max(1, int(os.environ.get("WAVELAB_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn: Callable, items: list) -> list:
    n = min(workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def run_experiment(cfg: ExperimentConfig) -> ScalingReport:
    """Run the configured sweep, fit slopes and mark pass/fail."""
    rep = ScalingReport()
    m = cfg.measurement
    if m in ("preservation", "nls_approx", "superposition"):
        pts = cfg.points()
        results = _map(_measure_point, [(cfg, b, r) for b, r in pts])
        for (b, r), (val, err) in zip(pts, results):
            if err:
                log.warning("point failed: %s", err)
                rep.notes.append(err)
            x = r / b ** (1 + cfg.eps) if m == "superposition" else r
            rep.rows.append(Row(m, b, r, x, val))
        rep.fits.append(fit_rows(rep.rows, m, cfg.order))
    elif m == "ode":
        case = ode4_case(seed=cfg.seed)
        res = ode_average_compare(case, cfg.tau_star, cfg.rhos, cfg.solver)
        if not res.invariant:
            rep.notes.append("excited set is not resonance invariant")
        for r, u, g in zip(res.rhos, res.unexcited, res.gaps):
            rep.rows.append(Row("ode_unexcited", math.nan, float(r), float(r), float(u)))
            rep.rows.append(Row("ode_gap", math.nan, float(r), float(r), float(g)))
        rep.fits.append(fit_rows(rep.rows, "ode_unexcited", cfg.order))
        rep.fits.append(fit_rows(rep.rows, "ode_gap", cfg.order))
    elif m == "blowup":
        grid = KGrid(cfg.M, cfg.dk)
        ok = True
        for r in cfg.rhos:
            model = toy_preset(amplitude=float(cfg.preset_params.get("amplitude", 1.0)), rho=float(r))
            try:
                err = toy_oracle_error(model, grid, cfg.solver)["error"]
            except WavelabError as exc:
                rep.notes.append(f"blowup rho={r}: {exc}")
                err = math.nan
            rep.rows.append(Row("blowup", model.beta, float(r), float(r), err))
            ok &= bool(err <= 1e-3)
        rep.fits.append(Fit("blowup", 0.0, math.nan, math.nan, math.nan, ok, len(cfg.rhos)))
    return rep


def refinement_change(cfg: ExperimentConfig, beta: float) -> dict:
    """Relative change of a measured gap under dtau halving and M doubling (same dk)."""
    rho = cfg.rho_of(beta)
    fn = {"preservation": preservation_gap, "nls_approx": nls_approx_gap}[cfg.measurement]
    base = fn(cfg, beta, rho)
    h = cfg.solver.step(rho)
    fine_t = fn(replace(cfg, solver=replace(cfg.solver, dtau=h / 2)), beta, rho)
    fine_m = fn(replace(cfg, M=2 * cfg.M), beta, rho)
    return {"value": base, "dtau": abs(fine_t - base) / base, "M": abs(fine_m - base) / base}


# ---------------------------------------------------------------------------
# reduction ladder


@dataclass
class LadderCase:
    """Band, nonlinearity, spectrum and data builder shared by the ladder rungs."""

    bs: object
    chi: object
    S: NKSpectrum
    specs: Callable  # beta -> list of WavepacketSpec
    grid: KGrid
    eps: float = 0.5
    tau_star: float = 0.5

    def problem(self, beta: float, rho: float) -> EvolutionProblem:
        h = synthesize_multiwavepacket(self.specs(beta), self.grid, self.bs)
        return EvolutionProblem(self.bs, self.chi, rho, h, self.tau_star, self.grid)


def counter_propagating_case(amplitudes=(1.0, 0.7), width: float = 0.25, eps: float = 0.5,
                             grid: KGrid | None = None, tau_star: float = 0.5) -> LadderCase:
    """Two cubic wavepackets at k = +1 and k = -1 on omega = 1 + k^2 / 2."""
    base = single_nls(eps=eps)
    S = NKSpectrum.of((1, 1.0), (1, -1.0))

    def specs(beta):
        return [WavepacketSpec(1, 1.0, beta, scaled_gaussian(width, amplitudes[0]), eps=eps, real=True),
                WavepacketSpec(1, -1.0, beta, scaled_gaussian(width, amplitudes[1]), eps=eps, real=True)]

    return LadderCase(base.bs, base.chi, S, specs, grid or KGrid(4096, 0.0025), eps, tau_star)


def single_packet_case(width: float = 0.25, eps: float = 0.5, grid: KGrid | None = None,
                       tau_star: float = 0.5) -> LadderCase:
    base = single_nls(width=width, eps=eps)
    return LadderCase(base.bs, base.chi, base.S, lambda beta: [base.spec(beta)], grid or KGrid(4096, 0.0025),
                      eps, tau_star)


LEVELS = ("full", "interaction", "averaged", "minimal")


def ladder_gaps(case: LadderCase, beta: float, rho: float, levels: Sequence[str] = LEVELS,
                config: SolverConfig | None = None, mu: int = 2, nu: int = 0) -> list:
    """sup_tau L1 gaps between adjacent requested levels, as (level_a, level_b, gap)."""
    config = config or SolverConfig()
    levels = list(levels)
    bad = [lv for lv in levels if lv not in LEVELS]
    if bad or len(levels) < 2:
        raise ConfigError(f"levels must be two or more of {LEVELS}, got {levels}")
    pr = case.problem(beta, rho)
    cache = {}

    def get(level):
        if level in cache:
            return cache[level]
        if level == "full":
            val = solve_integrated(pr, config)
        elif level == "interaction":
            sysi = InteractionSystem(pr, case.S, beta, case.eps)
            val = (sysi, solve_reduced(sysi, config))
        elif level == "averaged":
            sysa = InteractionSystem(pr, case.S, beta, case.eps, averaged=True)
            val = (sysa, solve_reduced(sysa, config))
        else:
            sysa, traj = get("averaged")
            scal = ScalarSystem(sysa)
            eg = eta_grid_for(case.grid, beta, case.eps)
            H = rescale_amplitudes(scal.initial, case.grid, case.S, beta, eg, case.eps)
            ms = MinimalSystem(MinimalSystemSpec.from_rho(mu, nu, rho, beta, case.eps), case.S, case.bs, case.chi,
                               eg, H, case.tau_star)
            val = (ms, solve_reduced(ms, config), eg, scal)
        cache[level] = val
        return val

    out = []
    for a, b in zip(levels, levels[1:]):
        pair = {a, b}
        if pair == {"full", "interaction"}:
            sysi, wi = get("interaction")
            gap = full_vs_interaction(pr, get("full"), sysi, wi)
        elif pair == {"interaction", "averaged"}:
            sysi, wi = get("interaction")
            gap = sup_gap(wi.states, get("averaged")[1].states, sysi.norm)
        elif pair == {"averaged", "minimal"}:
            sysa, wa = get("averaged")
            ms, wm, eg, scal = get("minimal")
            za = rescale_amplitudes(scal.scalarize(wa.states), case.grid, case.S, beta, eg, case.eps)
            gap = sup_gap(za, wm.states, ms.norm)
        elif pair == {"full", "averaged"}:
            sysa, wa = get("averaged")
            gap = full_vs_interaction(pr, get("full"), sysa, wa)
        else:
            raise ConfigError(f"no direct comparison between {a} and {b}")
        out.append((a, b, float(gap)))
    return out


def write_gaps_csv(path, records: Sequence[tuple]) -> None:
    """records: (level_a, level_b, rho, beta, gap)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("level_a", "level_b", "rho", "beta", "sup_tau_l1_gap"))
        for a, b, rho, beta, gap in records:
            w.writerow((a, b, _fmt(rho), _fmt(beta), _fmt(gap)))


def cutoff_gap(case: LadderCase, beta: float, rho: float, envelope: Callable, eta_grid: KGrid,
               mu: int = 2, config: SolverConfig | None = None) -> float:
    """sup_tau L1 gap between minimal systems with and without the eta cutoff."""
    H = minimal_initial({lab: envelope for lab in labels(len(case.S))}, case.S, eta_grid)
    trajs = []
    for cut in (True, False):
        spec = MinimalSystemSpec.from_rho(mu, 0, rho, beta, case.eps, cutoff_enabled=cut)
        ms = MinimalSystem(spec, case.S, case.bs, case.chi, eta_grid, H, case.tau_star)
        trajs.append(solve_reduced(ms, config or SolverConfig()))
    return sup_gap(trajs[0].states, trajs[1].states, ms.norm)
