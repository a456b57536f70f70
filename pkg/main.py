"""
IOS-assisted full-duplex MISO simulator - command line entry point
- run: execute a JSON scenario sweep (seeded Monte Carlo, optional worker pool)
- summarize: mean/std per sweep point from a results CSV
- Exit codes: 0 success, 2 if any point was infeasible or failed, 1 on
  configuration errors
"""

import argparse
import logging
import sys

import experiment_cli
from channel_model import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2


def build_parser():
    parser = argparse.ArgumentParser(prog="iosfd", description=__doc__.strip().splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for INFO, -vv for DEBUG (enables SDR lift checks)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario sweep")
    run.add_argument("--scenario", required=True, help="scenario JSON file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed-base", type=int, default=None, help="override the scenario seed base")
    run.add_argument("--parallel", type=int, default=1, help="worker processes")

    summ = sub.add_parser("summarize", help="aggregate a results CSV over seeds")
    summ.add_argument("--in", dest="csv", required=True, help="results CSV")
    return parser


def cmd_run(args):
    try:
        records = experiment_cli.run_scenario(args.scenario, out_dir=args.out,
                                              seed_base=args.seed_base, parallel=args.parallel)
    except ConfigError as exc:
        print(f"✗ Scenario error: {exc}")
        return EXIT_CONFIG

    failed = [r for r in records if r.status in experiment_cli.EXCLUDED_STATUSES]
    print(f"✓ {len(records)} records written to {args.out}")
    print(experiment_cli.format_table(experiment_cli.summarize(records)))
    if failed:
        print(f"⚠ {len(failed)} record(s) infeasible or failed")
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_summarize(args):
    try:
        summary, out = experiment_cli.summarize_csv(args.csv)
    except (OSError, ValueError) as exc:
        print(f"✗ Cannot summarize {args.csv}: {exc}")
        return EXIT_CONFIG
    print(experiment_cli.format_table(summary))
    print(f"✓ Summary written to {out}")
    return EXIT_OK


# --------------------- MAIN --------------------- #


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args)
    return cmd_summarize(args)


if __name__ == "__main__":
    sys.exit(main())
