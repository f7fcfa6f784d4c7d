#!/usr/bin/env python3
"""Summarize a run directory: per-arm tail means, log-log slopes and bound rows.

    python scripts/summarize.py results/pl-harmonic --metric opt_gap_mean --fit 1e3 1e5
"""

import argparse
import csv
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from gtsim.analysis import rate_fit


def read_metrics(path):
    """``{arm: (k, values[k, trial])}`` for one metric, plus the raw bound rows."""
    rows, bounds = defaultdict(dict), []
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for rec in reader:
            if rec and rec[0].startswith("kind="):
                bounds.append(dict(kv.split("=", 1) for kv in rec))
                continue
            row = dict(zip(header, rec))
            rows[row["method"]][(int(row["k"]), int(row["trial"]))] = row
    return rows, bounds


def series(rows: dict, metric: str):
    ks = sorted({k for k, _ in rows})
    ts = sorted({t for _, t in rows})
    vals = np.array([[float(rows[(k, t)][metric] or "nan") for t in ts] for k in ks])
    return np.array(ks, float), vals


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("run_dir")
    ap.add_argument("--metric", default="opt_gap_mean")
    ap.add_argument("--fit", nargs=2, type=float, metavar=("K_LO", "K_HI"),
                    help="fit the slope of the trial mean on [K_LO, K_HI]")
    ap.add_argument("--tail", type=float, default=0.1, help="fraction of records for the tail mean")
    args = ap.parse_args(argv)

    rows, bounds = read_metrics(Path(args.run_dir) / "metrics.csv")
    for arm, data in rows.items():
        k, vals = series(data, args.metric)
        if np.all(np.isnan(vals)):
            print(f"{arm}: {args.metric} not recorded")
            continue
        mean = np.mean(vals, axis=1)
        tail = mean[-max(1, int(len(mean) * args.tail)):].mean()
        line = f"{arm}: trials={vals.shape[1]} final={mean[-1]:.4g} tail={tail:.4g}"
        if args.fit:
            try:
                line += f" slope={rate_fit(k, mean, *args.fit):.3f}"
            except ValueError as exc:
                line += f" slope=n/a ({exc})"
        print(line)
    for b in bounds:
        status = "unclaimed" if b.get("claimed") == "false" else ("pass" if b["pass"] == "true" else "FAIL")
        extra = " ".join(f"{key}={b[key]}" for key in ("arm", "quantity") if key in b)
        print(f"bound {b['name']:12s} {status:9s} measured={b['measured']} value={b['value']} {extra}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
