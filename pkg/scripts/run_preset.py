#!/usr/bin/env python3
"""Run one or more built-in experiments, each into its own directory.

    python scripts/run_preset.py pl-sweep hetero --out results --trials 5
"""

import argparse
import sys
from pathlib import Path

from gtsim.harness.cli import main as gtsim_main
from gtsim.harness.presets import PRESETS


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("presets", nargs="*", help=f"any of: {', '.join(PRESETS)} (default: all)")
    ap.add_argument("--out", default="results", help="parent directory for run outputs")
    args, overrides = ap.parse_known_args(argv)
    worst = 0
    for name in args.presets or list(PRESETS):
        print(f"== {name}")
        code = gtsim_main(["run", "--preset", name, "--output", str(Path(args.out) / name), *overrides])
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
