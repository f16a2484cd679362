"""
Command configuration: flat YAML files, named presets and thread resolution.

Precedence is explicit flag > config file > built-in default.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Iterable, Optional

import yaml

from rgi.errors import InvalidConfig, IoFailure
from rgi.geometry import SHAPE_FAMILIES

logger = logging.getLogger(__name__)

THREADS_ENV = "RGI_THREADS"

# samples per shape family
COUNT_PRESETS = {
    "desk-train": 500,
    "desk-val": 50,
    "desk-test": 50,
    "full-train": 9750,
    "full-val": 250,
    "full-test": 125,
}


def load_config_file(path, allowed: Iterable[str]) -> dict:
    """Read a flat `key: value` YAML mapping, rejecting keys not in `allowed`."""
    if path is None:
        return {}
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise IoFailure(f"Cannot read config '{path}': {e}") from e
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise InvalidConfig(f"Config '{path}' is not valid YAML: {e}") from e

    if data is None:
        return {}
    if not isinstance(data, dict):
        raise InvalidConfig(f"Config '{path}' must be a mapping, got {type(data).__name__}")
    data = {str(k).replace("-", "_"): v for k, v in data.items()}
    unknown = set(data) - set(allowed)
    if unknown:
        raise InvalidConfig(f"Unknown keys in '{path}': {sorted(unknown)}")
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise InvalidConfig(f"Config '{path}' must be flat; nested values under {nested}")
    logger.debug("Loaded %d settings from %s", len(data), path)
    return data


def merge_options(defaults: dict, file_values: dict, flags: dict) -> dict:
    merged = dict(defaults)
    merged.update(file_values)
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


def resolve_threads(flag: Optional[int]) -> int:
    if flag is not None:
        threads = flag
    elif os.environ.get(THREADS_ENV):
        try:
            threads = int(os.environ[THREADS_ENV])
        except ValueError as e:
            raise InvalidConfig(f"{THREADS_ENV} must be an integer, got '{os.environ[THREADS_ENV]}'") from e
    else:
        threads = os.cpu_count() or 1
    if threads < 1:
        raise InvalidConfig(f"Thread count must be >= 1, got {threads}")
    return threads


def resolve_counts(per_family: Optional[int], preset: Optional[str]) -> dict:
    """Per-family sample counts from an explicit number or a named preset."""
    if per_family is None and preset is None:
        raise InvalidConfig("Give --per-family or --preset")
    if per_family is None:
        if preset not in COUNT_PRESETS:
            raise InvalidConfig(f"Unknown preset '{preset}'. Must be one of {sorted(COUNT_PRESETS)}")
        per_family = COUNT_PRESETS[preset]
    if int(per_family) != per_family or per_family < 0:
        raise InvalidConfig(f"per_family must be a non-negative integer, got {per_family}")
    return {family: int(per_family) for family in SHAPE_FAMILIES}
