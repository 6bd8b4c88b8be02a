"""Command-line front end: ``ppcat <subcommand> [--config PATH] [flags]``.

Exit codes: 0 success, 2 configuration error, 3 every trajectory diverged
(partial outputs written), 4 oracle truncation failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .io import ConfigError, load_manifest
from .model import ContractError
from .oracle import TruncationError
from . import runner

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_TRUNCATION = 4

SUBCOMMANDS = {
    "transient": ("transient", runner.run_transient),
    "sweep": ("regime_sweep", runner.run_regime_sweep),
    "parity-decay": ("parity_decay", runner.run_parity_decay),
    "momentum": ("momentum_scan", runner.run_momentum_scan),
    "reconstruct": ("reconstruct", runner.run_reconstruct),
    "oracle": (None, runner.run_oracle_only),
}

log = logging.getLogger("ppcat")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ppcat",
        description="Positive-P / gauge-P trajectory simulations of two-photon-driven "
                    "resonator arrays, with exact Fock-space references.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH", help="INI manifest")
        p.add_argument("--seed", metavar="U64", help="master seed")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--trajectories", metavar="N", help="number of trajectories")
        p.add_argument("--subensembles", metavar="S", help="number of subensembles")
        p.add_argument("--dt", metavar="X", help="time step")
        p.add_argument("--threads", metavar="N", help="worker threads (speed only)")
        p.add_argument("--no-oracle", action="store_true", help="skip the Fock-space oracle")
    return parser


def _overrides(args, experiment) -> dict:
    out = {
        "run.seed": args.seed,
        "run.output_dir": args.out,
        "run.trajectories": args.trajectories,
        "run.subensembles": args.subensembles,
        "run.dt": args.dt,
        "run.threads": args.threads,
    }
    if args.no_oracle:
        out["run.oracle"] = "false"
    if experiment is not None:
        out["experiment"] = experiment
    return {k: v for k, v in out.items() if v is not None}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    experiment, run = SUBCOMMANDS[args.command]
    try:
        manifest = load_manifest(args.config, _overrides(args, experiment))
        if args.command == "oracle" and args.no_oracle:
            raise ConfigError("--no-oracle", "cannot be combined with the oracle subcommand")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log.info("running %s with seed %d", args.command, manifest.config.seed)
    try:
        outcome = run(manifest)
    except TruncationError as exc:
        print(f"oracle truncation failure: {exc}", file=sys.stderr)
        return EXIT_TRUNCATION
    except ContractError as exc:  # includes ConfigError raised while running
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for path in outcome.files:
        print(path)
    if outcome.status != "complete":
        print("every trajectory diverged; outputs are marked incomplete", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
