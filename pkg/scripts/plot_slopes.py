#!/usr/bin/env python3
"""Plot the <measurement>.dat files a sweep leaves in its output directory.

    python3 scripts/plot_slopes.py out/preservation

Needs matplotlib (``pip install .[plot]``).
"""

import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def main(argv):
    if len(argv) != 1:
        print(__doc__)
        return 2
    out = Path(argv[0])
    fig, ax = plt.subplots(figsize=(5, 4))
    for dat in sorted(out.glob("*.dat")):
        v = np.loadtxt(dat, ndmin=2)
        if v.shape[0] < 2:
            continue
        p = np.polyfit(v[:, 0], v[:, 1], 1)
        ax.plot(v[:, 0], v[:, 1], "o", label=f"{dat.stem} (slope {p[0]:.2f})")
        ax.plot(v[:, 0], np.polyval(p, v[:, 0]), "k:")
    ax.set_xlabel("log10 x")
    ax.set_ylabel("log10 gap")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "slopes.png", dpi=120)
    print(f"writing {out / 'slopes.png'}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
