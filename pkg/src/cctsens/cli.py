"""Command line front end.

    cctsens run       --config run.ini [--out DIR] [--tcl SECONDS]
    cctsens sweep     --config sweep.ini [--out DIR] [--workers K]
    cctsens portrait  --config portrait.ini [--out DIR]
    cctsens systems list

Exit codes: 0 success, 2 a sweep point missed the tolerance, 3 bad
configuration, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config, with_out_dir
from .exceptions import CctError, ContractViolation
from .experiments import (EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, run_portrait, run_single,
                          run_sweep)
from .integrator import format_number as fmt
from .systems import CATALOG


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cctsens",
                                 description="Critical clearing times and their sensitivities.")
    sub = ap.add_subparsers(dest="verb", required=True)

    def with_config(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="INI configuration file")
        p.add_argument("--out", help="output directory (overrides [output] dir)")
        return p

    run = with_config("run", "CCT of one scenario, or one clearing time with --tcl")
    run.add_argument("--tcl", type=float, help="simulate this clearing time only")
    sweep = with_config("sweep", "parameter sweep, formula against finite differences")
    sweep.add_argument("--workers", type=int, default=1, help="parallel sweep points")
    with_config("portrait", "phase portrait, singular surface and critical elements")
    systems = sub.add_parser("systems", help="built-in systems")
    systems.add_argument("action", choices=["list"])
    return ap


def _systems_list(out) -> int:
    for sid in sorted(CATALOG):
        e = CATALOG[sid]
        params = ", ".join(f"{k}={fmt(v)}" for k, v in e.defaults.items())
        print(f"{sid}: {e.description}", file=out)
        print(f"    parameters: {params} (active {e.active})", file=out)
        print(f"    bracket: [{fmt(e.bracket[0])}, {fmt(e.bracket[1])}]  t_max: {fmt(e.t_max)}",
              file=out)
        print(f"    states: {e.states}", file=out)
    return EXIT_OK


def _print_pairs(pairs, out) -> None:
    for k, v in pairs:
        print(f"{k} = {fmt(v)}", file=out)


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = _parser().parse_args(argv)
    if args.verb == "systems":
        return _systems_list(out)
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg = with_out_dir(cfg, args.out)
        if args.verb == "sweep" and cfg.sweep is None:
            raise ConfigError("sweep needs a [sweep] section")
        if args.verb == "sweep" and args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        if args.verb == "run" and args.tcl is not None and args.tcl < 0:
            raise ConfigError("--tcl must be non-negative")
    except (ConfigError, ContractViolation) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.verb == "run":
            report = run_single(cfg, args.tcl)
            _print_pairs(report.summary(), out)
            return EXIT_OK
        if args.verb == "sweep":
            report = run_sweep(cfg, args.workers)
            for r in report.rows:
                print(",".join(fmt(v) for v in r.values()), file=out)
            for i in report.transitions:
                print(f"transition between {fmt(report.rows[i].p)} and "
                      f"{fmt(report.rows[i + 1].p)}", file=out)
            bad = report.failures()
            print(f"points outside tolerance or failed: {len(bad)}", file=out)
            return report.exit_code
        report = run_portrait(cfg)
        _print_pairs([("seeds", report.seeds), ("skipped", report.skipped),
                      ("trace_points", len(report.trace)),
                      ("trace_failures", report.trace_failures),
                      ("elements", len(report.elements))], out)
        for el in report.elements:
            print(f"{el.label} at {', '.join(fmt(c) for c in el.location.z)}", file=out)
        if report.critical is not None:
            _print_pairs([("cct", report.critical.cct)], out)
        return EXIT_OK
    except ContractViolation as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CctError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
