"""Command-line entry point: ``pfjcd run | replica | bench``.

Exit status is 0 on success, 1 for a configuration problem and 2 when at
least one trial failed (its row is still written, with the error name in
the ``status`` column).
"""

from __future__ import annotations

import argparse
import sys

from . import harness
from .errors import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_TRIAL_FAILED = 2


def _parser():
    p = argparse.ArgumentParser(prog="pfjcd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Monte-Carlo sweep to CSV")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--workers", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--methods", help="comma-separated method tags")
    run.add_argument("--timings", action="store_true",
                     help="fill the wall_ms columns (makes the CSV non-reproducible)")

    rep = sub.add_parser("replica", help="replica and large-system predictions to CSV")
    rep.add_argument("--config", required=True)
    rep.add_argument("--out", required=True)

    bench = sub.add_parser("bench", help="time original_df against pf_jcd")
    bench.add_argument("--config", required=True)
    bench.add_argument("--trials", type=int)
    bench.add_argument("--out", help="optional CSV of the timed rows")
    return p


def _load(args):
    cfg = harness.load_config(args.config)
    changes = {}
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "methods", None):
        changes["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if changes:
        cfg = cfg.replace(**changes)
        harness.validate(cfg)
    return cfg


def _write(records, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        harness.write_csv(records, fh)


def _status(records):
    failed = [r for r in records if not r.ok]
    for r in failed:
        print(f"failed: {r.method} snr={r.snr_db} trial={r.trial}: {r.status}", file=sys.stderr)
    return EXIT_TRIAL_FAILED if failed else EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = _load(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "run":
        records = harness.run_sweep(cfg, timings=args.timings)
        _write(records, args.out)
        return _status(records)

    if args.command == "replica":
        records = []
        for snr in cfg.snr_db:
            records.extend(harness.predict(cfg.scenario, snr))
        _write(records, args.out)
        return _status(records)

    records, summary = harness.bench(cfg, trials=args.trials)
    for line in summary.lines():
        print(line)
    if args.out:
        _write(records, args.out)
    return _status(records)


if __name__ == "__main__":
    sys.exit(main())
