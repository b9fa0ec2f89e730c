"""Command line: ``frm <experiment> [--config PATH] [--out DIR] [--seeds a,b,c] [--override k=v]``.

Exit status is 0 on success, 1 when a check fails and 2 on a configuration
error.
"""
import argparse
import sys

from .config import EXPERIMENTS, load_config, parse_seeds
from .errors import ConfigError

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2


def build_parser():
    p = argparse.ArgumentParser(prog="frm", description="ERM versus functional risk minimization experiments.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="flat TOML config file")
    p.add_argument("--out", help="output directory for rows.csv, summary.csv and config.echo")
    p.add_argument("--seeds", help="comma-separated seed list, replaces the configured seeds")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="set a dotted config key; repeatable")
    p.add_argument("--quiet", action="store_true", help="suppress per-run progress lines")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        seeds = parse_seeds(args.seeds) if args.seeds is not None else None
        cfg = load_config(args.config, args.experiment, args.override, seeds)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if cfg.experiment == "check":
        from .checks import run_checks

        results = run_checks(cfg["check.corrupt"])
        for r in results:
            print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
        failed = [r.name for r in results if not r.passed]
        if failed:
            print(f"{len(failed)} of {len(results)} checks failed: {', '.join(failed)}")
            return EXIT_CHECK_FAILED
        print(f"all {len(results)} checks passed")
        return EXIT_OK

    from .experiments import run_experiment
    from .report import emit_report

    progress = None if args.quiet else (lambda msg: print(msg, file=sys.stderr, flush=True))
    report = run_experiment(cfg, progress)
    if args.out:
        paths = emit_report(report, args.out)
        for p in paths.values():
            print(p)
    else:
        from .report import summary_csv

        sys.stdout.write(summary_csv(report))
    for k, v in sorted(report.flags.items()):
        if v:
            print(f"flag {k} = {v}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
