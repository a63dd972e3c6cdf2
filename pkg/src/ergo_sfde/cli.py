"""Command line entry point: ``ergo-sfde run|plotdata|validate``."""
import argparse
import logging
import sys
import warnings

from .config import load
from .errors import ConfigError
from .harness import EXIT_OK, EXIT_SCHEMA, emit_plotdata, run_experiment


def main(argv=None):
    ap = argparse.ArgumentParser(prog="ergo-sfde", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="run the experiment described by a config file")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="override [output] directory")
    p = sub.add_parser("plotdata", help="write plot-ready CSVs from a result JSON")
    p.add_argument("report")
    p.add_argument("-o", "--output")
    p = sub.add_parser("validate", help="check a config file against the schema")
    p.add_argument("config")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.cmd == "run":
        return run_experiment(args.config, args.output)
    if args.cmd == "validate":
        try:
            cfg = load(args.config)
        except ConfigError as e:
            print(f"invalid: {e}", file=sys.stderr)
            return EXIT_SCHEMA
        print(f"ok {cfg.experiment['kind']} {cfg.digest}")
        return EXIT_OK
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            written, _ = emit_plotdata(args.report, args.output)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
