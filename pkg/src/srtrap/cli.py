"""Command-line entry point.

    srtrap run --config scenario.cfg --preset secular [--seed N] [--out DIR]
    srtrap replay --record out/secular_record.json [--config scenario.cfg]
    srtrap validate --config scenario.cfg

Exit codes: 0 success, 1 configuration/validation error, 2 simulation error.
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .errors import ConfigError, DigestMismatchError, SrTrapError
from .presets import PRESETS, replay, run_scenario

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SIMULATION = 2


def _build_parser():
    parser = argparse.ArgumentParser(prog="srtrap",
                                     description="Linear Paul trap simulation suite")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a scenario preset")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--preset", required=True, choices=PRESETS)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--out", default=None)

    rep_p = sub.add_parser("replay", help="re-run a recorded scenario and compare")
    rep_p.add_argument("--record", required=True)
    rep_p.add_argument("--config", default=None)

    val_p = sub.add_parser("validate", help="parse and validate a config file")
    val_p.add_argument("--config", required=True)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            cfg = load_config(args.config)
            print(f"OK digest={cfg.digest}")
            return EXIT_OK
        if args.command == "run":
            cfg = load_config(args.config)
            record = run_scenario(cfg, args.preset, config_path=args.config,
                                  seed=args.seed, out_dir=args.out)
            for name in record.outputs:
                print(f"wrote {name}")
            print(f"record seed={record.seed} digest={record.config_digest[:12]}")
            return EXIT_OK
        if args.command == "replay":
            report = replay(args.record, config_path=args.config)
            for name, status in report.files:
                print(f"{name}: {status}")
            print("REPLAY " + ("PASS" if report.passed else "FAIL"))
            return EXIT_OK if report.passed else EXIT_SIMULATION
    except (ConfigError, DigestMismatchError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SrTrapError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
