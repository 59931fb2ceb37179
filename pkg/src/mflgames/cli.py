"""Command-line entry point: ``mflgames run <config>`` and ``mflgames validate <config>``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import load_config, parse_experiment
from .errors import ConfigParseError, MFLError

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _error(exc, exit_code):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    path = getattr(exc, "path", None)
    if path is not None:
        payload["path"] = path
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return exit_code


def _output_dir(exp, config_path, out):
    if out is not None:
        return Path(out)
    if exp.output:
        return Path(exp.output)
    return Path("runs") / Path(str(config_path)).stem


def cmd_run(args) -> int:
    try:
        exp = parse_experiment(load_config(args.config), seed=args.seed, threads=args.threads, output=args.out)
    except (MFLError, ValueError) as exc:
        return _error(exc, EXIT_CONFIG)
    out_dir = _output_dir(exp, args.config, args.out)
    if out_dir.exists() and any(out_dir.iterdir()) and not args.overwrite:
        return _error(ConfigParseError(f"output directory {out_dir} is not empty; pass --overwrite",
                                       path=str(out_dir)), EXIT_CONFIG)
    try:
        summary = exp.execute(out_dir)
    except (MFLError, ValueError, FloatingPointError, RuntimeError) as exc:
        return _error(exc, EXIT_RUNTIME)
    print(json.dumps({"status": "ok", "kind": summary["kind"], "output": str(out_dir)}, sort_keys=True))
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        exp = parse_experiment(load_config(args.config))
    except (MFLError, ValueError) as exc:
        return _error(exc, EXIT_CONFIG)
    report = {"status": "ok", "kind": exp.kind, **exp.estimate()}
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mflgames", description="Mean-field Langevin game experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run an experiment and write its artifacts")
    p.add_argument("config", help="config file, or the name of a bundled config")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--threads", type=int, default=None, help="worker threads for particle updates")
    p.add_argument("--overwrite", action="store_true", help="allow writing into a non-empty directory")
    p.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="check a config and estimate its cost without running it")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        return _error(ConfigParseError("must be >= 1", path="--threads"), EXIT_CONFIG)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
