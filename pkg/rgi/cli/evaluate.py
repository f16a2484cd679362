"""Evaluation command."""

from __future__ import annotations

import logging

from rgi.config import load_config_file, merge_options, resolve_threads
from rgi.dataset import read_dataset
from rgi.errors import exit_code_for
from rgi.metrics import THRESHOLD, evaluate, write_details_csv, write_report_csv
from rgi.model import load_checkpoint
from rgi.utils.response import create_response, error_info

logger = logging.getLogger(__name__)

FILE_KEYS = ("ckpt", "data", "out", "details", "threshold", "threads")
DEFAULTS = {"ckpt": None, "data": None, "out": "report.csv", "details": None, "threshold": THRESHOLD, "threads": None}


def register(subparsers, common) -> None:
    p = subparsers.add_parser(
        "evaluate",
        parents=[common],
        help="score a checkpoint on a dataset",
        description="Report ACC_w, delta_d and delta_theta per shape family and in total.",
    )
    p.add_argument("--ckpt", help="checkpoint file")
    p.add_argument("--data", help="dataset file")
    p.add_argument("--out", help="report CSV (default report.csv)")
    p.add_argument("--details", help="optional per-room detail CSV")
    p.add_argument("--threshold", type=float, help="presence threshold (default 0.5)")
    p.set_defaults(handler=run, parser=p)


def run(args):
    try:
        file_values = load_config_file(args.config, FILE_KEYS)
        opts = merge_options(DEFAULTS, file_values, {
            "ckpt": args.ckpt,
            "data": args.data,
            "out": args.out,
            "details": args.details,
            "threshold": args.threshold,
            "threads": args.threads,
        })
        if not opts["ckpt"] or not opts["data"]:
            args.parser.error("--ckpt and --data are required (flag or config file)")

        params = load_checkpoint(opts["ckpt"])
        dataset = read_dataset(opts["data"])
        report = evaluate(params, dataset, threshold=float(opts["threshold"]), threads=resolve_threads(opts["threads"]))

        out = write_report_csv(opts["out"], report)
        content = {"report": str(out), "columns": report.to_dict()}
        if opts["details"]:
            content["details"] = str(write_details_csv(opts["details"], report))
        return create_response(content=content, messages=[f"Evaluated {len(dataset)} rooms"])

    except Exception as e:
        logger.error("evaluate failed: %s", e)
        return create_response(error=error_info(e), exit_code=exit_code_for(e))
