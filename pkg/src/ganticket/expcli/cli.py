"""
``ganticket`` command line.

    ganticket run --config exp.ini [--out ROOT] [--seeds 0-4] [--workers N]
    ganticket report ARCHIVE [--format csv|json] [--out FILE]
    ganticket curve ARCHIVE [--out FILE]
    ganticket verify ARCHIVE

Exit codes: 0 ok, 1 runtime failure, 2 configuration error, 3 incomplete
archive. ``GANTICKET_RUNS`` sets the default archive root (``./runs``).
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from ganticket.errors import ConfigError
from ganticket.expcli import report as rpt
from ganticket.expcli.archive import Archive, default_root
from ganticket.expcli.config import load_config, parse_seeds
from ganticket.expcli.runner import RunError, run_experiment
from ganticket.expcli.verify import verify

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_INCOMPLETE = 0, 1, 2, 3

log = logging.getLogger("ganticket")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ganticket", description="Lottery-ticket experiments on toy GANs.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress per unit")
    sub = p.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run or resume an experiment")
    run.add_argument("--config", required=True, help="experiment INI file")
    run.add_argument("--out", help="archive root (default $GANTICKET_RUNS or ./runs)")
    run.add_argument("--seeds", help="override the seed list, e.g. '0-4' or '1,3'")
    run.add_argument("--workers", type=int, help="worker processes (one seed per task)")

    rep = sub.add_parser("report", help="best / extreme table per mode")
    rep.add_argument("archive")
    rep.add_argument("--format", choices=("csv", "json"), default="csv")
    rep.add_argument("--out", help="write to this file instead of stdout")

    cur = sub.add_parser("curve", help="per-sparsity mean score with 95%% t-interval")
    cur.add_argument("archive")
    cur.add_argument("--format", choices=("csv", "json"), default="csv")
    cur.add_argument("--out", help="output file (default <archive>.curve.csv, beside the archive)")

    ver = sub.add_parser("verify", help="re-check checksums and invariants")
    ver.add_argument("archive")
    return p


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _open(path: str) -> Archive:
    arc = Archive(path)
    if not arc.exists():
        raise ConfigError(f"{path}: not an archive (no manifest.json)")
    return arc


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seeds:
        try:
            cfg = replace(cfg, seeds=parse_seeds(args.seeds))
        except ValueError as err:
            raise ConfigError(f"--seeds: {err}") from None
    if args.workers is not None and args.workers < 1:
        raise ConfigError("--workers: must be >= 1")
    root = Path(args.out) if args.out else default_root()
    arc = run_experiment(cfg, root, args.workers)
    print(arc.path)
    return EXIT_OK


def cmd_report(args) -> int:
    rows = rpt.report_rows(_open(args.archive))
    text = rpt.to_json(rows) if args.format == "json" else rpt.to_csv(rows, rpt.REPORT_FIELDS)
    _emit(text, args.out)
    return EXIT_OK


def cmd_curve(args) -> int:
    arc = _open(args.archive)
    rows = rpt.curve_rows(arc)
    text = rpt.to_json(rows) if args.format == "json" else rpt.to_csv(rows, rpt.CURVE_FIELDS)
    out = args.out or str(arc.path.with_name(f"{arc.path.name}.curve.{args.format}"))
    _emit(text, out)
    print(out)
    return EXIT_OK


def cmd_verify(args) -> int:
    arc = _open(args.archive)
    problems = verify(arc)
    for line in problems:
        print(line)
    missing = arc.missing()
    if problems:
        return EXIT_RUNTIME
    if missing:
        print(f"incomplete: {len(missing)} unit(s) missing", file=sys.stderr)
        return EXIT_INCOMPLETE
    print("ok")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "report": cmd_report, "curve": cmd_curve, "verify": cmd_verify}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            code = COMMANDS[args.verb](args)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        return code
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except rpt.IncompleteArchive as err:
        print(str(err), file=sys.stderr)
        for unit in err.missing:
            print(f"missing: {unit}", file=sys.stderr)
        return EXIT_INCOMPLETE
    except RunError as err:
        print(f"run failed: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        print("interrupted; rerun the same command to resume", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
