"""Dataset generation command."""

from __future__ import annotations

import logging

from rgi.config import COUNT_PRESETS, load_config_file, merge_options, resolve_counts, resolve_threads
from rgi.dataset import SPLITS, GenerateConfig, generate_dataset, manifest_path
from rgi.errors import exit_code_for
from rgi.ism import SimConfig
from rgi.utils.response import create_response, error_info

logger = logging.getLogger(__name__)

FILE_KEYS = (
    "out", "per_family", "preset", "seed", "split", "threads",
    "max_order", "kernel_halfwidth", "reflection_range", "c",
)
DEFAULTS = {"out": None, "per_family": None, "preset": None, "seed": 7, "split": "train", "threads": None}


def register(subparsers, common) -> None:
    p = subparsers.add_parser(
        "generate",
        parents=[common],
        help="simulate rooms and write a dataset file",
        description="Simulate random rooms of every shape family and write their RIRs and wall labels.",
    )
    p.add_argument("--out", help="dataset file to write (required, flag or config)")
    p.add_argument("--per-family", type=int, help="samples per shape family")
    p.add_argument("--preset", choices=sorted(COUNT_PRESETS), help="named per-family count")
    p.add_argument("--seed", type=int, help="global seed (default 7)")
    p.add_argument("--split", choices=SPLITS, help="room stream to draw from (default train)")
    p.add_argument("--max-order", type=int, help="highest reflection order (default 6)")
    p.set_defaults(handler=run, parser=p)


def run(args):
    """Generate a dataset and its manifest."""
    try:
        file_values = load_config_file(args.config, FILE_KEYS)
        opts = merge_options(DEFAULTS, file_values, {
            "out": args.out,
            "per_family": args.per_family,
            "preset": args.preset,
            "seed": args.seed,
            "split": args.split,
            "threads": args.threads,
            "max_order": args.max_order,
        })
        if not opts["out"]:
            args.parser.error("--out is required (flag or config file)")

        sim_values = {k: opts[k] for k in ("max_order", "kernel_halfwidth", "reflection_range", "c") if opts.get(k) is not None}
        config = GenerateConfig(
            counts=resolve_counts(opts["per_family"], opts["preset"]),
            out=opts["out"],
            global_seed=int(opts["seed"]),
            split=opts["split"],
            sim=SimConfig.from_dict(sim_values),
            threads=resolve_threads(opts["threads"]),
        )
        manifest = generate_dataset(config)
        return create_response(
            content={
                "out": str(config.out),
                "manifest": str(manifest_path(config.out)),
                "per_family": manifest["per_family"],
                "sample_count": manifest["sample_count"],
                "elapsed_s": round(manifest["elapsed_s"], 3),
            },
            messages=[f"Wrote {manifest['sample_count']} samples to {config.out}"],
        )

    except Exception as e:
        logger.error("generate failed: %s", e)
        return create_response(error=error_info(e), exit_code=exit_code_for(e))
