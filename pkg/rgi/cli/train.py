"""Training command."""

from __future__ import annotations

import logging
from pathlib import Path

from rgi.config import load_config_file, merge_options
from rgi.dataset import read_dataset
from rgi.errors import exit_code_for
from rgi.model import save_checkpoint
from rgi.training import TrainConfig, train, write_history
from rgi.utils.response import create_response, error_info

logger = logging.getLogger(__name__)

FILE_KEYS = ("train", "val", "ckpt", "history") + tuple(TrainConfig.__dataclass_fields__)
DEFAULTS = {"train": None, "val": None, "ckpt": "model.rgiw", "history": None}


def register(subparsers, common) -> None:
    p = subparsers.add_parser(
        "train",
        parents=[common],
        help="fit the network on a dataset",
        description="Train with the permutation-invariant loss, keeping the best-validation checkpoint.",
    )
    p.add_argument("--train", help="training dataset file")
    p.add_argument("--val", help="validation dataset file")
    p.add_argument("--epochs", type=int, help="maximum number of epochs (default 100)")
    p.add_argument("--batch-size", type=int, help="samples per update (default 16)")
    p.add_argument("--lr", type=float, help="learning rate (default 1e-3)")
    p.add_argument("--patience", type=int, help="epochs without improvement before stopping (default 10)")
    p.add_argument("--seed", type=int, help="initialization and shuffling seed (default 0)")
    p.add_argument("--ckpt", help="checkpoint to write (default model.rgiw)")
    p.add_argument("--history", help="per-epoch history CSV (default <ckpt>.history.csv)")
    p.set_defaults(handler=run, parser=p)


def run(args):
    """Train, then save the best checkpoint and the history."""
    try:
        file_values = load_config_file(args.config, FILE_KEYS)
        opts = merge_options(DEFAULTS, file_values, {
            "train": args.train,
            "val": args.val,
            "ckpt": args.ckpt,
            "history": args.history,
            "max_epochs": args.epochs,
            "batch_size": args.batch_size,
            "learning_rate": args.lr,
            "patience": args.patience,
            "seed": args.seed,
        })
        if not opts["train"] or not opts["val"]:
            args.parser.error("--train and --val are required (flag or config file)")

        train_values = {k: opts[k] for k in TrainConfig.__dataclass_fields__ if k in opts}
        if "patience" not in train_values and "max_epochs" in train_values:
            # short runs keep the default patience within range
            train_values["patience"] = min(TrainConfig.patience, train_values["max_epochs"])
        config = TrainConfig.from_dict(train_values)

        train_set = read_dataset(opts["train"])
        val_set = read_dataset(opts["val"])
        result = train(train_set, val_set, config)

        ckpt = save_checkpoint(opts["ckpt"], result.best_params)
        history = write_history(opts["history"] or Path(str(ckpt) + ".history.csv"), result.history)
        return create_response(
            content={
                "best_val_total": result.best_val_total,
                "best_epoch": result.best_epoch,
                "epochs_run": len(result.history),
                "stopped_early": result.stopped_early,
                "ckpt": str(ckpt),
                "history": str(history),
                "config": config.to_dict(),
            },
            messages=[f"Best validation L {result.best_val_total:.6f} at epoch {result.best_epoch}"],
        )

    except Exception as e:
        logger.error("train failed: %s", e)
        return create_response(error=error_info(e), exit_code=exit_code_for(e))
