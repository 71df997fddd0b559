#!/usr/bin/env python3
"""Gaps between adjacent rungs of the reduction ladder, with log-log slopes.

    python3 scripts/ladder.py --out out/ladder_full

Writes gaps.csv plus slopes.txt.  Expect a few minutes per rung.
"""

import argparse
import sys
from pathlib import Path

from wavelab.fields import KGrid, loglog_fit, scaled_gaussian
from wavelab.harness import counter_propagating_case, cutoff_gap, ladder_gaps, single_packet_case, write_gaps_csv


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out/ladder_full")
    ap.add_argument("--skip-full", action="store_true", help="only run the envelope rungs")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records, lines = [], []

    if not args.skip_full:
        case = counter_propagating_case()
        beta = 0.1
        rhos = [0.04, 0.02, 0.01, 0.005]
        per_pair = {}
        for rho in rhos:
            for a, b, gap in ladder_gaps(case, beta, rho, ["full", "interaction", "averaged"]):
                records.append((a, b, rho, beta, gap))
                per_pair.setdefault((a, b), []).append(gap)
                print(f"{a}-{b} rho={rho:g}: {gap:.4e}", flush=True)
        for (a, b), gaps in per_pair.items():
            s, _, r2 = loglog_fit(rhos, gaps)
            lines.append(f"{a}-{b}: slope {s:.3f} vs rho (r2 {r2:.4f})")

    single = single_packet_case()
    rho, betas, gaps = 0.1, [0.2, 0.14, 0.1, 0.07], []
    for beta in betas:
        ((a, b, gap),) = ladder_gaps(single, beta, rho, ["averaged", "minimal"], mu=1)
        records.append((a, b, rho, beta, gap))
        gaps.append(gap)
        print(f"averaged-minimal beta={beta:g}: {gap:.4e}", flush=True)
    eps = single.eps
    s, _, r2 = loglog_fit([b ** (2 * (1 - eps)) for b in betas], gaps)
    lines.append(f"averaged-minimal (mu=1): slope {s:.3f} vs beta^(2(1-eps)) (r2 {r2:.4f})")

    betas, gaps = [0.2, 0.1, 0.05, 0.025], []
    for beta in betas:
        gaps.append(cutoff_gap(single, beta, 0.1, scaled_gaussian(1.0, 1.0), KGrid(1024, 0.05)))
        print(f"cutoff beta={beta:g}: {gaps[-1]:.4e}", flush=True)
    s, _, r2 = loglog_fit(betas, gaps)
    lines.append(f"cutoff on/off: slope {s:.3f} vs beta (r2 {r2:.4f})")

    write_gaps_csv(out / "gaps.csv", records)
    (out / "slopes.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


if __name__ == "__main__":
    sys.exit(main())
