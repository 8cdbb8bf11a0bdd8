#!/usr/bin/env python3
"""Run the bundled mass-on-car benchmark (both schemes over [0, 7] s).

Extra arguments are passed through to the CLI, e.g.::

    python3 scripts/run_benchmark.py --t-end 2.0 --scheme two_funnel
    python3 scripts/run_benchmark.py --output runs/quick

Artifacts land in the configured output directory (default runs/sec5):
config.json, <scheme>.csv, <scheme>_steps.json, summary.json.
"""

import sys

from funnel_mpc.cli import main

if __name__ == "__main__":
    sys.exit(main(["run", "--config", "paper_sec5", *sys.argv[1:]]))
