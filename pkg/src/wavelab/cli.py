"""Command-line entry point: ``wavelab resonance|simulate|sweep|compare|report``."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .dispersion import build_band
from .errors import ConfigError, NoConvergence, WavelabError
from .fields import save_field
from .harness import (
    LEVELS,
    ExperimentConfig,
    counter_propagating_case,
    emit_report,
    ladder_gaps,
    read_config,
    read_report_csv,
    report_csv,
    report_text,
    run_experiment,
    single_packet_case,
    write_gaps_csv,
)
from .fields import KGrid
from .models import CoupledNLSParams, coupled_nls_problem, nls_grid, single_nls, toy_preset, toy_problem
from .resonance import NKSpectrum, analyze, closure_and_invariance
from .solver import solve_integrated, write_diagnostics_csv

log = logging.getLogger("wavelab")


def _band_from(cp) -> object:
    if not cp.has_section("band"):
        raise ConfigError("resonance config needs a [band] section")
    sec = dict(cp["band"])
    kind = sec.pop("kind", "")
    params = {}
    for k, v in sec.items():
        if k == "coeffs":
            params[k] = [[float(x) for x in row.split()] for row in v.split(";") if row.strip()]
        elif k == "path":
            params[k] = v
        else:
            params[k] = float(v)
    try:
        return build_band(kind, **params)
    except KeyError as exc:
        raise ConfigError(f"band kind {kind!r} needs the key {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _pairs(text: str) -> NKSpectrum:
    pairs = []
    for item in text.replace(",", " ").split():
        n, k = item.split(":")
        pairs.append((int(n), float(k)))
    return NKSpectrum(tuple(pairs))


def _fmt_lam(lam) -> str:
    return " ".join(f"{'+' if z > 0 else '-'}{l}" for z, l in lam.lam)


def resonance_table(S: NKSpectrum, bs, orders, tol: float) -> tuple:
    a = analyze(S, bs, orders, tol)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("m", "zeta", "n", "string", "delta", "kappa", "k_out", "kind", "mismatch"))
    for s in a.solutions:
        delta = " ".join(str(d) for d in s.lam.delta)
        w.writerow((s.m, s.zeta, s.n, _fmt_lam(s.lam), delta, f"{s.lam.kappa(S):.10g}", f"{s.k_out:.10g}",
                    s.kind, f"{s.mismatch:.3e}"))
    try:
        cl = closure_and_invariance(S, bs, orders, tol)
        closure = f"{' '.join(f'{p.n}:{p.k_star:.10g}' for p in cl.R_inf.pairs)} ({cl.iterations} iterations)"
    except NoConvergence as exc:
        # R(S) != S already on the first pass, so both flags are false
        cl = exc.partial
        closure = f"not reached after {cl.iterations} iterations"
    summary = [
        f"pairs: {' '.join(f'{p.n}:{p.k_star:.10g}' for p in S.pairs)}",
        f"solutions: {len(a.solutions)} (universal {len(a.universal)}, internal {len(a.internal)}, "
        f"external {len(a.external)})",
        f"near-resonances: {len(a.near)}",
        f"resonance invariant: {cl.resonance_invariant}",
        f"universally invariant: {cl.universally_invariant}",
        f"closure: {closure}",
    ]
    return buf.getvalue(), "\n".join(summary) + "\n"


def cmd_resonance(args, cp) -> int:
    bs = _band_from(cp)
    sec = cp["resonance"] if cp.has_section("resonance") else {}
    if "pairs" not in sec:
        raise ConfigError("[resonance] needs a 'pairs' entry such as '1:0.7 1:-0.7'")
    S = _pairs(sec["pairs"])
    orders = [int(x) for x in sec.get("orders", "3").replace(",", " ").split()]
    table, summary = resonance_table(S, bs, orders, float(sec.get("tol", 1e-9)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resonance.csv").write_text(table, encoding="utf-8")
    (out / "resonance.txt").write_text(summary, encoding="utf-8")
    sys.stdout.write(table if args.format == "csv" else summary)
    return 0


def _problem_for(cfg: ExperimentConfig):
    beta = cfg.betas[0] if cfg.betas else 0.1
    rho = cfg.rho_of(beta) if cfg.betas else (cfg.rhos[0] if cfg.rhos else cfg.rho_fixed)
    if cfg.preset in ("", "single_nls"):
        case = single_nls(eps=cfg.eps)
        return case.problem(beta, rho, KGrid(cfg.M, cfg.dk), cfg.tau_star)
    if cfg.preset == "toy":
        model = toy_preset(rho=rho)
        return toy_problem(model, KGrid(cfg.M, cfg.dk))
    if cfg.preset == "coupled_nls":
        p = replace(CoupledNLSParams(), beta=beta, rho=rho, tau_star=cfg.tau_star)
        return coupled_nls_problem(p, nls_grid(p))
    raise ConfigError(f"simulate does not support preset {cfg.preset!r}")


def cmd_simulate(args, cp) -> int:
    cfg = ExperimentConfig.from_parser(cp)
    pr = _problem_for(cfg)
    traj = solve_integrated(pr, cfg.solver)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_diagnostics_csv(out / "diagnostics.csv", traj)
    final = type(pr.initial)(pr.grid, pr.physical(traj.final, traj.taus[-1]))
    save_field(out / "final_field.txt", final)
    print(f"steps={len(traj.step_taus) - 1} dtau={traj.dtau:.6g} sup_l1={traj.sup_l1():.6g}")
    return 0


def cmd_sweep(args, cp) -> int:
    cfg = ExperimentConfig.from_parser(cp)
    rep = run_experiment(cfg)
    emit_report(rep, args.out)
    sys.stdout.write(report_csv(rep) if args.format == "csv" else report_text(rep))
    return 0 if rep.passed else 1


def cmd_compare(args, cp) -> int:
    cfg = ExperimentConfig.from_parser(cp)
    levels = [x.strip() for x in args.levels.split(",") if x.strip()]
    grid = KGrid(cfg.M, cfg.dk)
    if cfg.preset == "counter_propagating":
        case = counter_propagating_case(eps=cfg.eps, grid=grid, tau_star=cfg.tau_star)
    else:
        case = single_packet_case(eps=cfg.eps, grid=grid, tau_star=cfg.tau_star)
    records = []
    for b, r in cfg.points():
        for a, bb, gap in ladder_gaps(case, b, r, levels, cfg.solver):
            records.append((a, bb, r, b, gap))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_gaps_csv(out / "gaps.csv", records)
    sys.stdout.write((out / "gaps.csv").read_text(encoding="utf-8"))
    return 0


def cmd_report(args, cp) -> int:
    path = Path(args.out) / "report.csv"
    rows = read_report_csv(path)
    if args.format == "csv":
        sys.stdout.write(path.read_text(encoding="utf-8"))
        return 0
    for r in rows:
        if r["slope"]:
            status = "PASS" if r["pass"] == "true" else "FAIL"
            print(f"{r['measurement']}: slope={r['slope']} r2={r['r2']} {status}")
    return 0


COMMANDS = {
    "resonance": cmd_resonance,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wavelab", description="Multi-wavepacket experiments.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="INI experiment file")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--format", choices=("csv", "text"), default="text")
    p.add_argument("--levels", default=",".join(LEVELS), help="compare: comma-separated ladder levels")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cp = read_config(args.config)
        if args.seed is not None:
            if not cp.has_section("experiment"):
                cp.add_section("experiment")
            cp["experiment"]["seed"] = str(args.seed)
        if args.out is None:
            args.out = cp.get("experiment", "out", fallback="out")
        return COMMANDS[args.command](args, cp)
    except WavelabError as exc:
        print(f"wavelab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
