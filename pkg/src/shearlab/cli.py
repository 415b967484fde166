"""Command-line entry point: shearlab <subcommand> --config PATH [--seed N] [--workers N] [--out DIR]."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, parse_config
from .experiments import (
    EXIT_CONFIG,
    list_presets,
    run_experiment,
    run_solve,
    shipped_config_text,
    shipped_configs,
    write_config_failure,
)

# subcommand -> engine it expects (None: any config with the needed fields)
SUBCOMMANDS = {
    "solve": None,
    "decay-scan": "spectral-scan",
    "gevrey-scan": "gevrey-scan",
    "mc-det": "mc-inverse-moment",
    "mc-skorokhod": "mc-skorokhod",
    "fk-check": "feynman-kac-check",
    "crosscheck": "bound-crosscheck",
    "report": "full-report",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shearlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, engine in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run a {engine or 'spectral solve'} config")
        p.add_argument("--config", required=True,
                       help="path to a TOML config, or the name of a shipped config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
        p.add_argument("--out", default=None, help="output directory (default: config output_dir)")
    p = sub.add_parser("presets", help="list profile presets and shipped configs")
    p.add_argument("--configs", action="store_true", help="list shipped config names instead")
    return parser


def _read_config_text(ref: str) -> str:
    path = Path(ref)
    if path.is_file():
        return path.read_text(encoding="utf-8")
    return shipped_config_text(ref)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "presets":
        if args.configs:
            for name in shipped_configs():
                print(name)
        else:
            for name, description in list_presets():
                print(f"{name:8s} {description}")
        return 0

    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    text = ""
    try:
        text = _read_config_text(args.config)
        cfg = parse_config(text)
        if args.seed is not None:
            cfg.seed = args.seed
            if not 0 <= cfg.seed < 2**64:
                raise ConfigError("seed must be a 64-bit unsigned integer")
        expected = SUBCOMMANDS[args.command]
        if expected is not None and cfg.engine != expected:
            raise ConfigError(f"subcommand {args.command} expects engine {expected!r}, config has {cfg.engine!r}")
    except (ConfigError, OSError) as exc:
        if not isinstance(exc, ConfigError):
            exc = ConfigError(str(exc))
        print(f"config error: {exc}", file=sys.stderr)
        if args.out:
            write_config_failure(args.out, text, exc)
        return EXIT_CONFIG

    runner = run_solve if args.command == "solve" else None
    result = run_experiment(cfg, args.workers, args.out, runner=runner)
    status = {0: "pass", 1: "failure", 3: "tolerance failure"}.get(result.exit_code, "?")
    print(f"{cfg.name}: {status} -> {result.output_dir}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
