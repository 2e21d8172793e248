"""Command-line entry point: ``ivrkit <subcommand> --config <path> [--out <dir>]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import parse_config
from .errors import ConfigError, FormatError, IvrError
from .experiment import SUBCOMMANDS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_HELP = {
    "eigen1d": "zero-order spectra of the three local modes",
    "dos": "histogram of zero-order product states",
    "propagate": "propagate the initial state and write all diagnostics",
    "analyze": "recompute diagnostics from stored checkpoints",
    "spectrum": "spectral function from a stored autocorrelation",
    "micro": "microcanonical comparison from stored mode energies",
    "report": "text summary of a run directory",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ivrkit", description="Vibrational energy flow in triatomics.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=_HELP[name])
        p.add_argument("--config", required=True, type=Path, help="run configuration file")
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides output.dir)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        manifest = SUBCOMMANDS[args.command](cfg, args.out, base_dir=args.config.resolve().parent)
    except (ConfigError, FormatError) as exc:
        print(f"ivrkit: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IvrError as exc:
        print(f"ivrkit: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    out = args.out if args.out is not None else cfg.out_dir
    print(f"{args.command}: {manifest.status}, {len(manifest.files)} files in {out}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
