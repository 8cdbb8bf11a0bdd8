#!/usr/bin/env python3
"""Plot a finished run directory: error, error rate, and input versus time.

Reads every <scheme>.csv in the run directory and overlays the schemes in
three panels: the tracking error against the +/- psi0 funnel, the error
rate against +/- psi1, and the applied input. Usage::

    python3 scripts/plot_results.py runs/sec5
    python3 scripts/plot_results.py runs/sec5 --output comparison.png
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def load_runs(run_dir: Path) -> dict:
    return {
        csv.stem: np.genfromtxt(csv, delimiter=",", names=True)
        for csv in sorted(run_dir.glob("*.csv"))
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "run", nargs="?", default="runs/sec5", help="run directory with <scheme>.csv files"
    )
    parser.add_argument(
        "--output", default=None, help="image path (default: <run>/results.png)"
    )
    args = parser.parse_args()
    run_dir = Path(args.run)
    runs = load_runs(run_dir)
    if not runs:
        print(f"no CSV files found in {run_dir}")
        return 2

    fig, (ax_e, ax_edot, ax_u) = plt.subplots(3, 1, figsize=(9, 10), sharex=True)
    first = next(iter(runs.values()))
    ax_e.plot(first["t"], first["psi0"], "k--", lw=1.0, label=r"$\pm\psi_0(t)$")
    ax_e.plot(first["t"], -first["psi0"], "k--", lw=1.0)
    ax_edot.plot(first["t"], first["psi1"], "k--", lw=1.0, label=r"$\pm\psi_1(t)$")
    ax_edot.plot(first["t"], -first["psi1"], "k--", lw=1.0)
    for name, data in runs.items():
        ax_e.plot(data["t"], data["e"], lw=1.2, label=name)
        ax_edot.plot(data["t"], data["edot"], lw=1.2, label=name)
        ax_u.plot(data["t"], data["u"], lw=1.2, label=name)
    ax_e.set_ylabel("tracking error $e$")
    ax_edot.set_ylabel("error rate $\\dot e$")
    ax_u.set_ylabel("input $u$")
    ax_u.set_xlabel("$t$ [s]")
    for ax in (ax_e, ax_edot, ax_u):
        ax.grid(alpha=0.3)
        ax.legend(loc="upper right", fontsize=9)
    fig.tight_layout()

    out = Path(args.output) if args.output else run_dir / "results.png"
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
