"""
Reproducible RIR datasets.

File layout (little-endian): a 28-byte header followed by fixed-size records.
A JSON manifest sidecar (`<file>.json`) echoes the generation config.
"""

from __future__ import annotations

import json
import logging
import struct
import time
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from tqdm import tqdm

from rgi.errors import (
    AllZeroInput,
    BadMagic,
    InvalidConfig,
    IoFailure,
    ShapeMismatch,
    TruncatedFile,
    VersionMismatch,
)
from rgi.geometry import SHAPE_FAMILIES, WPRIME, sample_room
from rgi.ism import RirSample, SimConfig, first_order_visibility, simulate_sample
from rgi.utils.log import progress_enabled

logger = logging.getLogger(__name__)

MAGIC = b"RGI1"
FORMAT_VERSION = 1
CHANNELS = 32
TAPS = 1024
FS_HZ = 8000
SPLITS = ("train", "val", "test")

HEADER = struct.Struct("<4s6I")
RECORD_DTYPE = np.dtype(
    [
        ("shape_id", "u1"),
        ("num_walls", "u1"),
        ("pad", "u1", (2,)),
        ("seed", "<u8"),
        ("A", "<f4", (WPRIME, 4)),
        ("p", "<f4", (WPRIME,)),
        ("rir", "<f4", (CHANNELS, TAPS)),
    ]
)

MASK64 = (1 << 64) - 1


def mix_seed(global_seed: int, index: int) -> int:
    """splitmix64 step keyed by (global_seed, index)."""
    z = (global_seed + (index + 1) * 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def sample_seed(global_seed: int, split: str, index: int) -> int:
    """Per-sample room seed; each split draws from its own stream."""
    return mix_seed(mix_seed(global_seed, SPLITS.index(split)), index)


@dataclass(frozen=True)
class DatasetHeader:
    sample_count: int
    magic: bytes = MAGIC
    format_version: int = FORMAT_VERSION
    channels: int = CHANNELS
    taps: int = TAPS
    wprime: int = WPRIME
    fs_hz: int = FS_HZ

    def pack(self) -> bytes:
        return HEADER.pack(
            self.magic, self.format_version, self.sample_count,
            self.channels, self.taps, self.wprime, self.fs_hz,
        )

    @classmethod
    def unpack(cls, raw: bytes) -> "DatasetHeader":
        if len(raw) < HEADER.size:
            raise TruncatedFile(f"Dataset header needs {HEADER.size} bytes, found {len(raw)}")
        magic, version, count, channels, taps, wprime, fs_hz = HEADER.unpack(raw[: HEADER.size])
        return cls(
            sample_count=count, magic=magic, format_version=version,
            channels=channels, taps=taps, wprime=wprime, fs_hz=fs_hz,
        )

    def check(self) -> None:
        if self.magic != MAGIC:
            raise BadMagic(f"Not an rgi dataset (magic {self.magic!r}, expected {MAGIC!r})")
        if self.format_version != FORMAT_VERSION:
            raise VersionMismatch(f"Dataset format v{self.format_version}, this build reads v{FORMAT_VERSION}")
        dims = (self.channels, self.taps, self.wprime, self.fs_hz)
        if dims != (CHANNELS, TAPS, WPRIME, FS_HZ):
            raise ShapeMismatch(f"Dataset dims (channels, taps, W', fs) = {dims}, expected {(CHANNELS, TAPS, WPRIME, FS_HZ)}")


def sample_to_record(sample: RirSample) -> np.ndarray:
    if not 0 <= sample.shape_id < len(SHAPE_FAMILIES):
        raise InvalidConfig(f"shape_id {sample.shape_id} out of range")
    nonzero_rows = int((np.abs(sample.A).sum(axis=1) > 0).sum())
    if not sample.num_walls == nonzero_rows == int(round(float(np.sum(sample.p)))):
        raise InvalidConfig(
            f"num_walls {sample.num_walls} disagrees with A ({nonzero_rows} rows) or p (sum {np.sum(sample.p)})"
        )
    rec = np.zeros(1, dtype=RECORD_DTYPE)
    rec["shape_id"] = sample.shape_id
    rec["num_walls"] = sample.num_walls
    rec["seed"] = sample.seed
    rec["A"] = sample.A
    rec["p"] = sample.p
    rec["rir"] = sample.rir
    return rec


def record_to_sample(rec) -> RirSample:
    return RirSample(
        shape_id=int(rec["shape_id"]),
        num_walls=int(rec["num_walls"]),
        seed=int(rec["seed"]),
        A=np.array(rec["A"], dtype=np.float32),
        p=np.array(rec["p"], dtype=np.float32),
        rir=np.array(rec["rir"], dtype=np.float32),
    )


class RirDataset(Sequence):
    """Read-only view over dataset records; indexing yields RirSample."""

    def __init__(self, records: np.ndarray):
        self.records = records

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return RirDataset(self.records[i])
        return record_to_sample(self.records[i])

    def subset(self, indices) -> "RirDataset":
        return RirDataset(self.records[np.asarray(indices)])

    @property
    def shape_ids(self) -> np.ndarray:
        return self.records["shape_id"].astype(np.int64)

    def family_counts(self) -> dict:
        ids = self.shape_ids
        return {family: int((ids == k).sum()) for k, family in enumerate(SHAPE_FAMILIES)}


class DatasetWriter:
    """Single ordered writer; the header promises sample_count records."""

    def __init__(self, path, sample_count: int):
        self.path = Path(path)
        self.sample_count = sample_count
        self.written = 0
        self._fh = None

    def __enter__(self) -> "DatasetWriter":
        try:
            self._fh = open(self.path, "wb")
            self._fh.write(DatasetHeader(sample_count=self.sample_count).pack())
        except OSError as e:
            raise IoFailure(f"Cannot write dataset '{self.path}': {e}") from e
        return self

    def append(self, sample: RirSample) -> None:
        rec = sample_to_record(sample)
        try:
            self._fh.write(rec.tobytes())
        except OSError as e:
            raise IoFailure(f"Write to '{self.path}' failed: {e}") from e
        self.written += 1

    def __exit__(self, exc_type, exc, tb):
        self._fh.close()
        if exc_type is None and self.written == self.sample_count:
            return False
        # a partial file would fail later reads with TruncatedFile
        self.path.unlink(missing_ok=True)
        logger.warning("Removed incomplete dataset %s (%d of %d records)", self.path, self.written, self.sample_count)
        if exc_type is None:
            raise IoFailure(f"Wrote {self.written} records but the header promises {self.sample_count}")
        return False


def write_dataset(path, samples: Sequence) -> Path:
    with DatasetWriter(path, len(samples)) as writer:
        for sample in samples:
            writer.append(sample)
    return Path(path)


def read_dataset(path) -> RirDataset:
    """Load and validate a dataset file."""
    path = Path(path)
    try:
        size = path.stat().st_size
        with open(path, "rb") as fh:
            raw = fh.read(HEADER.size)
    except OSError as e:
        raise IoFailure(f"Cannot read dataset '{path}': {e}") from e

    header = DatasetHeader.unpack(raw)
    header.check()
    expected = HEADER.size + header.sample_count * RECORD_DTYPE.itemsize
    if size < expected:
        raise TruncatedFile(f"'{path}' holds {size} bytes, header promises {expected}")
    if size > expected:
        raise IoFailure(f"'{path}' has {size - expected} trailing bytes after the last record")

    records = np.fromfile(path, dtype=RECORD_DTYPE, count=header.sample_count, offset=HEADER.size)
    logger.debug("Read %d samples from %s", len(records), path)
    return RirDataset(records)


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def read_manifest(path) -> dict:
    try:
        return json.loads(manifest_path(path).read_text())
    except OSError as e:
        raise IoFailure(f"Cannot read manifest for '{path}': {e}") from e


@dataclass
class GenerateConfig:
    counts: dict
    out: str
    global_seed: int = 7
    split: str = "train"
    sim: SimConfig = field(default_factory=SimConfig)
    threads: int = 1

    def __post_init__(self):
        unknown = set(self.counts) - set(SHAPE_FAMILIES)
        if unknown:
            raise InvalidConfig(f"Unknown shape families {sorted(unknown)}")
        if any(int(v) < 0 for v in self.counts.values()):
            raise InvalidConfig(f"Counts must be >= 0, got {self.counts}")
        if self.split not in SPLITS:
            raise InvalidConfig(f"Unknown split '{self.split}'. Must be one of {SPLITS}")
        if self.threads < 1:
            raise InvalidConfig(f"threads must be >= 1, got {self.threads}")
        if self.sim.mic_count != CHANNELS or self.sim.taps != TAPS or self.sim.fs != FS_HZ:
            raise InvalidConfig("Dataset files store 32 channels x 1024 taps at 8 kHz")
        self.counts = {family: int(self.counts.get(family, 0)) for family in SHAPE_FAMILIES}

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def plan(self) -> list:
        """(family, seed) per sample index, families in block order."""
        families = [family for family in SHAPE_FAMILIES for _ in range(self.counts[family])]
        return [
            (family, sample_seed(self.global_seed, self.split, index))
            for index, family in enumerate(families)
        ]


def _simulate_task(task) -> tuple:
    family, seed, sim = task
    room = sample_room(family, seed, reflection_range=sim.reflection_range)
    sample = simulate_sample(room, sim)
    visible = int(first_order_visibility(room).sum())
    return sample, visible


def generate_dataset(config: GenerateConfig) -> dict:
    """Simulate every planned room and write the dataset plus its manifest."""
    if config.total == 0:
        raise InvalidConfig("Dataset would be empty: all per-family counts are zero")

    plan = config.plan()
    tasks = [(family, seed, config.sim) for family, seed in plan]
    start = time.perf_counter()
    visible = {family: [] for family in SHAPE_FAMILIES}
    occluded_paths = 0

    logger.info("Generating %d samples (%s split, seed %d) with %d worker(s)",
                config.total, config.split, config.global_seed, config.threads)
    pool = ProcessPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
    try:
        results = pool.map(_simulate_task, tasks, chunksize=4) if pool else map(_simulate_task, tasks)
        with DatasetWriter(config.out, config.total) as writer:
            for sample, n_visible in tqdm(results, total=config.total, desc="simulate", disable=not progress_enabled()):
                writer.append(sample)
                visible[sample.family].append(n_visible)
                occluded_paths += sample.stats.rejected_by_occlusion
    finally:
        if pool is not None:
            pool.shutdown()
    elapsed = time.perf_counter() - start

    manifest = {
        "format_version": FORMAT_VERSION,
        "sample_count": config.total,
        "record_size": RECORD_DTYPE.itemsize,
        "split": config.split,
        "global_seed": config.global_seed,
        "per_family": config.counts,
        "reflection_range": list(config.sim.reflection_range),
        "sim": config.sim.to_dict(),
        "first_order_visible_walls": {
            family: (float(np.mean(v)) if v else None) for family, v in visible.items()
        },
        "occlusion_rejections": occluded_paths,
    }
    try:
        manifest_path(config.out).write_text(json.dumps(manifest, indent=2) + "\n")
    except OSError as e:
        raise IoFailure(f"Cannot write manifest for '{config.out}': {e}") from e

    logger.info("Wrote %s in %.1f s", config.out, elapsed)
    return {**manifest, "elapsed_s": elapsed}


def normalize_input(rir: np.ndarray) -> np.ndarray:
    """Scale all channels by the global peak magnitude."""
    peak = np.abs(rir).max()
    if peak == 0:
        raise AllZeroInput("Cannot normalize an all-zero RIR")
    return rir / peak


def stack_inputs(dataset: RirDataset, indices: Optional[Iterable[int]] = None) -> np.ndarray:
    """Normalized (B, 32, 1024) float64 model inputs."""
    records = dataset.records if indices is None else dataset.records[np.asarray(list(indices))]
    return np.stack([normalize_input(rec["rir"].astype(np.float64)) for rec in records])
