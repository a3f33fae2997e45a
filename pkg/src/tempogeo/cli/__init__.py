"""Command line interface: ``tempogeo run | list | validate | show``."""

from __future__ import annotations

import argparse
import json
import os
import sys

from tempogeo.cli import catalog
from tempogeo.cli.runner import run
from tempogeo.cli.scenario import ConfigError
from tempogeo.cli.schema import diagnostics, load
from tempogeo.fields import FieldError
from tempogeo.geometry import GeometryError
from tempogeo.parallel import default_workers

EXIT_OK = 0
EXIT_REJECTED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _load_doc(ref: str):
    if ref in catalog.BUILTINS and not os.path.exists(ref):
        return catalog.get(ref)
    try:
        return load(ref)
    except OSError as err:
        raise ConfigError([f"$: cannot read {ref}: {err.strerror}"]) from err
    except json.JSONDecodeError as err:
        raise ConfigError([f"$: invalid JSON at line {err.lineno} column {err.colno}: {err.msg}"]) from err


def _print_diagnostics(diags):
    for d in diags:
        print(d, file=sys.stderr)


def cmd_run(args) -> int:
    try:
        doc = _load_doc(args.spec)
        report = run(doc, seed=args.seed, workers=args.workers, out=args.out)
    except ConfigError as err:
        _print_diagnostics(err.diagnostics)
        return EXIT_CONFIG
    except (GeometryError, FieldError, FloatingPointError, ArithmeticError) as err:
        print(f"numeric abort: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    print(report.table())
    return EXIT_OK if report.passed else EXIT_REJECTED


def cmd_list(args) -> int:
    width = max(len(n) for n in catalog.names())
    for name in catalog.names():
        spec = catalog.BUILTINS[name]
        print(f"{name:<{width}}  {spec['anchor']}  |  {spec['description']}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        doc = _load_doc(args.spec)
    except ConfigError as err:
        _print_diagnostics(err.diagnostics)
        return EXIT_CONFIG
    diags = diagnostics(doc)
    if diags:
        _print_diagnostics(diags)
        return EXIT_CONFIG
    print("valid")
    return EXIT_OK


def cmd_show(args) -> int:
    if args.name not in catalog.BUILTINS:
        print(f"unknown scenario {args.name!r}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(catalog.get(args.name), indent=2, ensure_ascii=False))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tempogeo", description="Stochastic analysis on manifolds with time-dependent geometry.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file or built-in scenario")
    r.add_argument("spec", help="path to a JSON scenario or a built-in name")
    r.add_argument("--seed", type=int, default=None, help="override the ensemble seed")
    r.add_argument("--workers", type=int, default=default_workers(), help="worker threads (results do not depend on it)")
    r.add_argument("--out", default=None, help="output directory (default runs/<name>)")
    r.set_defaults(func=cmd_run)

    ls = sub.add_parser("list", help="list built-in scenarios")
    ls.set_defaults(func=cmd_list)

    v = sub.add_parser("validate", help="check a scenario without simulating")
    v.add_argument("spec")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("show", help="print a built-in scenario as JSON")
    s.add_argument("name")
    s.set_defaults(func=cmd_show)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
