"""Command-line interface: synth, prepare, train, tune, eval, explain,
baseline, compare, all driven by one JSON config file.

Exit codes: 0 success, 1 user error (bad input, missing artifact),
2 internal error. Diagnostics go to stderr; artifacts never carry
timestamps, so reruns with identical config are byte-identical.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, parse_config, resolve_config
from .pipeline import COMMANDS, UserError, run


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fraudlens",
        description="Panel-data fraud classification pipeline",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", help="JSON config file (defaults apply if omitted)")
        p.add_argument("--output", help="output directory (overrides paths.output)")
        p.add_argument("--seed", type=int, help="master seed override for every stage")
        p.add_argument("--preset", choices=["initial-paper", "expost-paper", "exante-paper"])
        if name == "explain":
            p.add_argument("--company", help="company id to explain")
    return parser


def _overrides(args) -> dict:
    out: dict = {}
    if args.output:
        out.setdefault("paths", {})["output"] = args.output
    if args.seed is not None:
        out.setdefault("pipeline", {})["seed"] = args.seed
        out.setdefault("training", {})["seed"] = args.seed
        out.setdefault("anomaly", {})["seed"] = args.seed
        out.setdefault("baseline", {})["seed"] = args.seed
        out.setdefault("synth", {})["seed"] = args.seed
    if getattr(args, "company", None):
        out.setdefault("explain", {})["company"] = args.company
    return out


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.config:
            cfg = parse_config(args.config, preset=args.preset, overrides=_overrides(args))
        else:
            cfg = resolve_config({}, preset=args.preset, overrides=_overrides(args))
        return run(args.command, cfg)
    except (ConfigError, UserError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # pragma: no cover - internal failure path
        import traceback

        traceback.print_exc(file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
