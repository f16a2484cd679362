"""Dump one dataset sample for external plotting."""

from __future__ import annotations

import csv
import logging

import numpy as np

from rgi.config import load_config_file, merge_options
from rgi.dataset import manifest_path, read_dataset, read_manifest
from rgi.errors import InvalidConfig, IoFailure, exit_code_for
from rgi.geometry import FAMILY_LABELS, mic_positions, room_invariant_violations, room_mesh, sample_room
from rgi.ism import SimConfig, enumerate_image_sources, first_order_visibility, validate_paths
from rgi.utils.response import create_response, error_info

logger = logging.getLogger(__name__)

WHAT = ("rir", "images", "room", "visibility")
FILE_KEYS = ("data", "index", "what", "out", "max_order")
DEFAULTS = {"data": None, "index": 0, "what": "rir", "out": None, "max_order": 2}


def register(subparsers, common) -> None:
    p = subparsers.add_parser(
        "inspect",
        parents=[common],
        help="dump a sample's RIR, image sources or room",
        description="Write one sample's RIR channels or image sources to CSV, or summarize its room.",
    )
    p.add_argument("--data", help="dataset file")
    p.add_argument("--index", type=int, help="sample index (default 0)")
    p.add_argument("--what", choices=WHAT, help="what to dump (default rir)")
    p.add_argument("--out", help="CSV to write (required for rir and images)")
    p.add_argument("--max-order", type=int, help="reflection order for --what images (default 2)")
    p.set_defaults(handler=run, parser=p)


def _sim_settings(data) -> SimConfig:
    if not manifest_path(data).exists():
        return SimConfig()
    return SimConfig.from_dict(read_manifest(data).get("sim", {}))


def _write_rows(path, header, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            if header:
                writer.writerow(header)
            writer.writerows(rows)
    except OSError as e:
        raise IoFailure(f"Cannot write '{path}': {e}") from e


def _dump_images(room, sim: SimConfig, max_order: int, out) -> dict:
    images = enumerate_image_sources(room, max_order)
    receiver = mic_positions(sim.mic_count, sim.mic_radius)[0]
    valid = validate_paths(room, images, receiver)
    rows = [
        [int(images.orders[i]), "-".join(str(w) for w in images[i].wall_sequence) or "direct",
         *(f"{v:.9f}" for v in images.positions[i]), f"{images.gains[i]:.9f}", int(valid[i])]
        for i in range(len(images))
    ]
    _write_rows(out, ("order", "wall_sequence", "x", "y", "z", "gain", "valid_at_mic0"), rows)
    return {"images": len(images), "valid": int(valid.sum())}


def _room_summary(room) -> dict:
    mesh = room_mesh(room)
    return {
        "family": FAMILY_LABELS[room.shape_family],
        "seed": room.seed,
        "num_walls": room.num_walls,
        "bbox": list(room.bbox),
        "footprint": room.footprint,
        "planes": room.planes,
        "reflection_coeffs": room.reflection_coeffs,
        "convex": room.is_convex(),
        "watertight": bool(mesh.is_watertight),
        "volume": float(mesh.volume),
        "violations": room_invariant_violations(room),
    }


def run(args):
    try:
        file_values = load_config_file(args.config, FILE_KEYS)
        opts = merge_options(DEFAULTS, file_values, {
            "data": args.data,
            "index": args.index,
            "what": args.what,
            "out": args.out,
            "max_order": args.max_order,
        })
        if not opts["data"]:
            args.parser.error("--data is required (flag or config file)")
        if opts["what"] not in WHAT:
            raise InvalidConfig(f"Unknown --what '{opts['what']}'. Must be one of {WHAT}")
        if opts["what"] in ("rir", "images") and not opts["out"]:
            args.parser.error(f"--out is required for --what {opts['what']}")

        dataset = read_dataset(opts["data"])
        index = int(opts["index"])
        if not 0 <= index < len(dataset):
            raise InvalidConfig(f"Index {index} out of range for {len(dataset)} samples")
        sample = dataset[index]
        content = {"index": index, "seed": sample.seed, "family": FAMILY_LABELS[sample.family]}

        if opts["what"] == "rir":
            _write_rows(opts["out"], None, ([f"{v:.9g}" for v in channel] for channel in sample.rir))
            content.update(out=opts["out"], shape=list(sample.rir.shape))
            return create_response(content=content)

        sim = _sim_settings(opts["data"])
        room = sample_room(sample.family, sample.seed, reflection_range=sim.reflection_range)
        if sim.reflection_coeffs is not None:
            room.reflection_coeffs = np.asarray(sim.reflection_coeffs, dtype=np.float64)

        if opts["what"] == "images":
            content.update(out=opts["out"], **_dump_images(room, sim, int(opts["max_order"]), opts["out"]))
        elif opts["what"] == "room":
            content.update(_room_summary(room))
        else:
            visible = first_order_visibility(room)
            content.update(visible=visible, visible_count=int(visible.sum()), num_walls=room.num_walls)
        return create_response(content=content)

    except Exception as e:
        logger.error("inspect failed: %s", e)
        return create_response(error=error_info(e), exit_code=exit_code_for(e))
