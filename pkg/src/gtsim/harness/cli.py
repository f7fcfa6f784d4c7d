"""Command-line entry point: ``gtsim run``, ``gtsim presets``, ``gtsim config``.

Any config key can be overridden with ``--key value`` (or
``--section.key value``) after the named options.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, parse_config
from .presets import PRESETS
from .runner import EXIT_CONFIG, config_from_manifest, run_experiment


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gtsim", description="Decentralized gradient-tracking simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run an experiment"), ("config", "print the resolved config")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="key = value config file with [section] headers")
        p.add_argument("--preset", choices=sorted(PRESETS), help="built-in experiment")
        p.add_argument("--manifest", help="replay the config recorded in a run manifest")
        if name == "run":
            p.add_argument("--allow-divergence", action="store_true",
                           help="exit 0 even if a trial diverges")
            p.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("presets", help="list built-in experiments")
    return ap


def _load(args, overrides):
    if args.manifest:
        cfg = config_from_manifest(args.manifest)
        if overrides or args.config:
            mapping = cfg.to_dict()
            cfg = parse_config(args.config, overrides, mapping=mapping)
        return cfg
    return parse_config(args.config, overrides, preset=args.preset)


def main(argv=None) -> int:
    args, overrides = _parser().parse_known_args(argv)
    if args.command == "presets":
        for name, p in PRESETS.items():
            print(f"{name:15s} {p.description}")
        return 0
    try:
        if args.command == "run" and args.allow_divergence:
            overrides = overrides + ["--allow_divergence", "true"]
        cfg = _load(args, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "config":
        print(json.dumps(cfg.to_dict(), indent=2))
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        result = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for c in result.checks:
        print(c.row())
    arms = result.manifest["arms"]
    for a in arms:
        status = "DIVERGED" if a["diverged"] else "ok"
        print(f"{a['label']}: {a['schedule']} {status}")
    print(f"outputs in {result.output} (exit {result.exit_code})")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
