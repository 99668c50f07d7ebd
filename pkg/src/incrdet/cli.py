"""Command-line entry point.

Subcommands: gen-data, train, adapt, eval, report.  Exit codes: 0
success, 2 usage or config error, 3 I/O failure, 4 numerical failure.
Logging verbosity comes from the INCRDET_LOG environment variable
(error, info or debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path

from .dataset_io import DatasetError, load_dataset, write_dataset
from .evaluation import ForgettingReport
from .scenes import DOMAIN_CLASSES, default_spec, generate_scenes
from .training import (ConfigError, ExperimentConfig, NumericalError,
                       evaluate_checkpoint, run_adaptation, train_baseline)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _setup_logging() -> None:
    level_name = os.environ.get("INCRDET_LOG", "info").lower()
    level = _LOG_LEVELS.get(level_name, logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _read_config(path: str) -> tuple:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_IO) from exc
    try:
        return ExperimentConfig.from_json(text), text
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc


def cmd_gen_data(args) -> int:
    if args.domain not in DOMAIN_CLASSES:
        raise CliError(
            f"unknown domain '{args.domain}'; valid domains: "
            f"{', '.join(sorted(DOMAIN_CLASSES))}", EXIT_USAGE)
    if args.count < 0:
        raise CliError("--count must be >= 0", EXIT_USAGE)
    spec = default_spec(args.domain, args.image_size)
    scenes = generate_scenes(args.domain, args.count, args.seed, spec=spec)
    try:
        write_dataset(args.out, scenes, args.domain)
    except OSError as exc:
        raise CliError(f"cannot write dataset to {args.out}: {exc}", EXIT_IO) from exc
    instances = Counter()
    names = dict((cid, name) for name, cid in DOMAIN_CLASSES[args.domain])
    for _, anns in scenes:
        for ann in anns:
            instances[ann["category_id"]] += 1
    print(f"wrote {args.count} images to {args.out}")
    for cid in sorted(names):
        print(f"  {names[cid]} (id {cid}): {instances.get(cid, 0)} instances")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, text = _read_config(args.config)
    try:
        train_baseline(cfg, text, args.out)
    except (DatasetError, FileNotFoundError, OSError) as exc:
        raise CliError(str(exc), EXIT_IO) from exc
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        print(f"diagnostics: {json.dumps(exc.diagnostics)}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"baseline checkpoint and manifest written to {args.out}")
    return EXIT_OK


def cmd_adapt(args) -> int:
    cfg, text = _read_config(args.config)
    if args.preset:
        cfg.adaptation.preset = args.preset
        cfg.adaptation.plan = None
    try:
        cfg.adaptation.validate()
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    try:
        run_adaptation(cfg, text, args.from_checkpoint, args.out)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    except (DatasetError, FileNotFoundError, OSError) as exc:
        raise CliError(str(exc), EXIT_IO) from exc
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        print(f"diagnostics: {json.dumps(exc.diagnostics)}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"adaptation checkpoints and report written to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        table, ids = evaluate_checkpoint(args.checkpoint, args.dataset, args.domain,
                                         split=args.split)
    except KeyError as exc:
        raise CliError(exc.args[0], EXIT_USAGE) from exc
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    except (DatasetError, FileNotFoundError, OSError) as exc:
        raise CliError(str(exc), EXIT_IO) from exc
    print(f"{len(ids)} images, split '{args.split}'")
    print(table.format_text())
    out = args.out or str(Path(args.checkpoint).parent / f"eval_{args.domain}.json")
    try:
        Path(out).write_text(json.dumps(table.to_json_dict(), indent=1, sort_keys=True))
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}", EXIT_IO) from exc
    return EXIT_OK


def cmd_report(args) -> int:
    run = Path(args.run)
    report_json = run / "report.json"
    if not report_json.exists():
        raise CliError(f"no report.json under {run}; run 'incrdet adapt' first", EXIT_IO)
    try:
        report = ForgettingReport.from_json_dict(json.loads(report_json.read_text()))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise CliError(f"cannot read report {report_json}: {exc}", EXIT_IO) from exc
    text = report.format_text()
    print(text)
    (run / "report.txt").write_text(text + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="incrdet",
        description="Incremental object detection experiments on synthetic scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--domain", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--image-size", type=int, default=128)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the source-domain baseline")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="run a staged adaptation plan on the target domain")
    p.add_argument("--config", required=True)
    p.add_argument("--from-checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", default=None,
                   help="override the config's schedule preset (table3_row1..table3_row4,"
                        " control_full_unfreeze)")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--split", choices=("train", "val", "all"), default="val")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="print the forgetting report of an adaptation run")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
