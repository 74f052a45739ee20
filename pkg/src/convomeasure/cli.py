"""``convomeasure <experiment> --config <path> [--seed N] [--out <path>]``.

Exit codes: 0 success, 2 invalid config or input, 3 a mathematical condition
failed (admissibility of the interaction, det constancy, engine caps).
"""
import argparse
import logging
import sys

from . import __version__
from .config import SPEC_VERSION
from .experiments import (
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXPERIMENTS,
    NUMERICAL_ERRORS,
    ConditionFailure,
    ConfigError,
    ExperimentConfig,
    ResultRecord,
    atomic_write,
    run,
)

log = logging.getLogger("convomeasure")


def build_parser():
    parser = argparse.ArgumentParser(prog="convomeasure", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"convomeasure {__version__} (spec_version {SPEC_VERSION})")
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override engine.seed")
    parser.add_argument("--out", default=None, help="result JSON path (default: config 'output' or stdout)")
    parser.add_argument("--csv", default=None, help="also write the plot-ready CSV table here")
    parser.add_argument("--workers", type=int, default=1,
                        help="threads for sampling/quadrature; results do not depend on it")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _emit(record, out, csv_path):
    text = record.to_json()
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)
    if csv_path:
        atomic_write(csv_path, record.to_csv())


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config, args.experiment, args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or cfg.output
    csv_path = args.csv or cfg.csv
    try:
        record = run(cfg, workers=max(1, args.workers))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"condition failure: {exc}", file=sys.stderr)
        if isinstance(exc, ConditionFailure) and exc.record is not None:
            payload, rows = exc.record
            _emit(ResultRecord(cfg.digest(), cfg.experiment, payload, status="failed", rows=rows),
                  out, csv_path)
        return EXIT_NUMERICAL
    log.info("%s finished in %.3fs", cfg.experiment, record.wall_time)
    _emit(record, out, csv_path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
