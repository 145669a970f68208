"""Command-line entry point: `hsic-learn <subcommand> [flags]`.

Besides the listed flags, any ExperimentSpec field can be set with
`--field value` or `--field=value` (dotted prefixes such as `--train.epochs`
are accepted and resolved to the last component).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time

from . import checks
from . import data as D
from . import experiments as E
from .config import ConfigError, load_spec

SUBCOMMANDS = {
    "synthetic": "synthetic",
    "bike": "bike",
    "mnist": "mnist_rotated",
    "batchsize": "batch_size",
    "proptest": "proptest",
    "fetch": None,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hsic-learn", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(SUBCOMMANDS))
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--repeats", type=int)
    p.add_argument("--cache", dest="cache_dir", help="dataset cache directory")
    p.add_argument("--workers", type=int)
    p.add_argument("--paper-scale", action="store_true", help="full-size repeat counts and n grid")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _extra_overrides(rest: list) -> list:
    out, i = [], 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        if "=" in tok:
            out.append(tok[2:])
            i += 1
        elif i + 1 < len(rest):
            out.append(f"{tok[2:]}={rest[i + 1]}")
            i += 2
        else:
            raise ConfigError(f"flag {tok} needs a value")
    return out


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def run(argv=None) -> int:
    args, rest = build_parser().parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        spec = load_spec(args.config, _extra_overrides(rest), seed=args.seed, out_dir=args.out_dir,
                         repeats=args.repeats, cache_dir=args.cache_dir, workers=args.workers,
                         experiment=SUBCOMMANDS[args.command] or "proptest")
        if args.paper_scale:
            spec.apply_paper_scale()
            if args.repeats:
                spec.repeats = args.repeats
        spec.validate()
    except (ConfigError, ValueError, TypeError) as exc:
        return _fail("config", str(exc), 2)

    t0 = time.perf_counter()
    try:
        if args.command == "fetch":
            got_bike = D.fetch_bike(spec.cache_dir)
            got_mnist = D.fetch_mnist(spec.cache_dir)
            print(json.dumps({"bike_downloaded": got_bike, "mnist_files_downloaded": got_mnist,
                              "cache_dir": spec.cache_dir}))
            return 0
        if args.command == "proptest":
            results = checks.run_all(spec.seed)
            for r in results:
                print(r.line())
            return 0 if all(r.passed for r in results) else 1
        if args.command == "synthetic":
            table = E.run_synthetic(spec)
            md = E.markdown_table(table)
        elif args.command == "batchsize":
            table = E.run_batch_size(spec)
            md = E.markdown_table(table)
        elif args.command == "bike":
            table = E.run_bike(spec)
            md = E.bike_markdown(table)
        else:
            table = E.run_mnist_rotated(spec)
            md = E.markdown_table(table, metrics=("accuracy_source", "accuracy_target"))
    except E.DataMissingError as exc:
        return _fail("data_missing", str(exc), 3)
    except D.ChecksumError as exc:
        return _fail("checksum", str(exc), 4)
    except (OSError, D.ParseError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    out = E.write_outputs(table, spec, md)
    print(md)
    print(f"wrote {out}/results.csv, runs.csv, table.md, meta.json ({time.perf_counter() - t0:.1f}s)")
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
