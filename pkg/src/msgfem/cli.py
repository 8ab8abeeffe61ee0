"""Command-line entry point: ``msgfem <subcommand> [--config PATH] [--out DIR] [--workers N] [--seed S]``.

Each subcommand writes ``report.csv`` (deterministic for a given config and
seed) and ``summary.txt`` (human-readable, including timings) into the output
directory.  ``solve`` also writes ``solution.csv`` and ``basis_<i>.csv`` for
the patches listed under ``[export] patches``.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .config import ConfigError, ScenarioConfig, load, serialize
from .studies import RUNNERS, write_csv

log = logging.getLogger("msgfem")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msgfem", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "one GFEM solve; writes the fine-mesh solution",
        "nwidth": "restriction eigenvalues on concentric ellipses",
        "study": "convergence of the GFEM error in the local dimension",
        "homog": "cell problem and eps-sweep of restriction eigenvalues",
        "validate": "kernel, partition-of-unity and spectral invariant suites",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", type=Path, help="INI scenario file (defaults if omitted)")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
        sp.add_argument("--workers", type=int, help="patch-job worker processes (overrides the config)")
        sp.add_argument("--seed", type=int, help="random seed (overrides the config)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> ScenarioConfig:
    cfg = load(args.config) if args.config else ScenarioConfig()
    sc = cfg.scenario
    sc = dataclasses.replace(sc, kind=args.command)
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        sc = dataclasses.replace(sc, workers=args.workers)
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        sc = dataclasses.replace(sc, seed=args.seed)
    return dataclasses.replace(cfg, scenario=sc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    log.info("running %s into %s", args.command, out)
    with threadpool_limits(limits=1):
        try:
            report = RUNNERS[args.command](cfg, cfg.scenario.workers)
        except Exception as exc:  # noqa: BLE001 - reported with a nonzero exit
            log.debug("failure", exc_info=True)
            print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
            return 1
    write_csv(out / "report.csv", report.header, report.rows)
    for name, (header, rows) in report.files.items():
        write_csv(out / name, header, rows)
    lines = report.summary + ["", f"status: {'ok' if report.ok else 'FAILED'}",
                              f"seed: {cfg.scenario.seed}", f"workers: {cfg.scenario.workers}",
                              f"pid: {os.getpid()}", "", "configuration:", serialize(cfg)]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(report.summary))
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
