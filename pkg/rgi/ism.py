"""
Image source model for prism rooms.

Image sources are enumerated per room, independent of the receiver; whether a
reflection path actually exists is decided per receiver by backtracking the
wall sequence through the finite wall polygons and testing every leg for
occlusion (needed for L-shaped rooms).
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from rgi.errors import InvalidConfig, MicOutsideRoom
from rgi.geometry import (
    MIC_COUNT,
    MIC_RADIUS,
    REFLECTION_RANGE,
    SHAPE_FAMILIES,
    RoomModel,
    mic_positions,
    ray_polygon_intersect,
    reflect_point,
    room_to_wall_matrix,
    segment_hits,
)

logger = logging.getLogger(__name__)

ORIGIN = np.zeros(3)
SHAPE_IDS = {family: idx for idx, family in enumerate(SHAPE_FAMILIES)}


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings; reflection_coeffs overrides the per-room draw."""

    fs: int = 8000
    taps: int = 1024
    c: float = 343.0
    max_order: int = 6
    kernel_halfwidth: int = 40
    mic_count: int = MIC_COUNT
    mic_radius: float = MIC_RADIUS
    reflection_range: tuple = REFLECTION_RANGE
    reflection_coeffs: Optional[tuple] = None
    dedup_resolution: float = 1e-6

    def __post_init__(self):
        if self.fs <= 0 or self.taps <= 0:
            raise InvalidConfig(f"fs and taps must be positive, got fs={self.fs}, taps={self.taps}")
        if self.c <= 0:
            raise InvalidConfig(f"Speed of sound must be positive, got {self.c}")
        if self.max_order < 0:
            raise InvalidConfig(f"max_order must be >= 0, got {self.max_order}")
        if self.kernel_halfwidth < 1:
            raise InvalidConfig(f"kernel_halfwidth must be >= 1, got {self.kernel_halfwidth}")
        lo, hi = self.reflection_range
        if not 0 < lo <= hi <= 1:
            raise InvalidConfig(f"reflection_range must lie in (0, 1], got {self.reflection_range}")
        if self.reflection_coeffs is not None and not all(0 < r <= 1 for r in self.reflection_coeffs):
            raise InvalidConfig("reflection_coeffs must lie in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        values = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        for key in ("reflection_range", "reflection_coeffs"):
            if values.get(key) is not None:
                values[key] = tuple(values[key])
        return cls(**values)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class ImageSource:
    position: np.ndarray
    order: int
    wall_sequence: tuple
    gain: float


@dataclass(eq=False)
class ImageSourceSet(Sequence):
    """Columnar store of image sources; indexing yields ImageSource records.

    sequences is (N, max_order) with -1 padding; the last reflection sits at
    column order - 1.
    """

    positions: np.ndarray
    sequences: np.ndarray
    orders: np.ndarray
    gains: np.ndarray

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return self.subset(np.arange(len(self))[i])
        order = int(self.orders[i])
        return ImageSource(
            position=self.positions[i].copy(),
            order=order,
            wall_sequence=tuple(int(w) for w in self.sequences[i, :order]),
            gain=float(self.gains[i]),
        )

    @property
    def max_order(self) -> int:
        return self.sequences.shape[1]

    def subset(self, selector) -> "ImageSourceSet":
        return ImageSourceSet(
            positions=self.positions[selector],
            sequences=self.sequences[selector],
            orders=self.orders[selector],
            gains=self.gains[selector],
        )


@dataclass
class PathStats:
    enumerated: int = 0
    pruned_by_distance: int = 0
    rejected_by_polygon: int = 0
    rejected_by_occlusion: int = 0
    accepted: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def enumerate_image_sources(
    room: RoomModel,
    max_order: int,
    source=ORIGIN,
    coeffs=None,
) -> ImageSourceSet:
    """All wall sequences up to max_order without immediate repetition.

    Rows are in lexicographic order of (order, wall sequence), starting with
    the direct source.
    """
    if max_order < 0:
        raise InvalidConfig(f"max_order must be >= 0, got {max_order}")
    planes = room.planes
    normals, offsets = planes[:, :3], planes[:, 3]
    coeffs = room.reflection_coeffs if coeffs is None else np.asarray(coeffs, dtype=np.float64)
    num_walls = room.num_walls

    level_pos = np.asarray(source, dtype=np.float64)[None, :]
    level_seq = np.full((1, max_order), -1, dtype=np.int64)
    level_gain = np.ones(1)
    last = np.full(1, -1, dtype=np.int64)

    positions, sequences, orders, gains = [level_pos], [level_seq], [np.zeros(1, dtype=np.int64)], [level_gain]
    for k in range(1, max_order + 1):
        parents = np.repeat(np.arange(len(level_pos)), num_walls)
        walls = np.tile(np.arange(num_walls), len(level_pos))
        keep = walls != last[parents]
        parents, walls = parents[keep], walls[keep]

        p = level_pos[parents]
        dist = (p * normals[walls]).sum(axis=1) + offsets[walls]
        level_pos = p - 2.0 * dist[:, None] * normals[walls]
        level_seq = level_seq[parents].copy()
        level_seq[:, k - 1] = walls
        level_gain = level_gain[parents] * coeffs[walls]
        last = walls

        positions.append(level_pos)
        sequences.append(level_seq)
        orders.append(np.full(len(level_pos), k, dtype=np.int64))
        gains.append(level_gain)

    return ImageSourceSet(
        positions=np.concatenate(positions),
        sequences=np.concatenate(sequences),
        orders=np.concatenate(orders),
        gains=np.concatenate(gains),
    )


def validate_path(room: RoomModel, img: ImageSource, receiver, source=ORIGIN) -> bool:
    """Check one reflection path by backtracking from the receiver.

    Each leg toward the current image must cross the wall it reflects on, and
    no physical leg may pass through any other wall.
    """
    receiver = np.asarray(receiver, dtype=np.float64)
    listener, image = receiver, np.asarray(img.position, dtype=np.float64)
    points, at_wall = [receiver], [None]

    for w in reversed(img.wall_sequence):
        wall = room.walls[w]
        hit = ray_polygon_intersect(listener, image, wall)
        if hit is None:
            return False
        points.append(hit.point)
        at_wall.append(w)
        image = reflect_point(wall.plane, image)
        listener = hit.point
    points.append(np.asarray(source, dtype=np.float64))
    at_wall.append(None)

    for j in range(len(points) - 1):
        skip = (at_wall[j], at_wall[j + 1])
        for idx, wall in enumerate(room.walls):
            if idx in skip:
                continue
            if ray_polygon_intersect(points[j], points[j + 1], wall) is not None:
                return False
    return True


def _occluded(room: RoomModel, starts, ends, skip_a, skip_b) -> np.ndarray:
    blocked = np.zeros(len(starts), dtype=bool)
    for wall_id, wall in enumerate(room.walls):
        cand = np.flatnonzero(~blocked & (skip_a != wall_id) & (skip_b != wall_id))
        if cand.size == 0:
            continue
        hit, _, _ = segment_hits(starts[cand], ends[cand], wall)
        blocked[cand[hit]] = True
    return blocked


def validate_paths(
    room: RoomModel,
    images: ImageSourceSet,
    receiver,
    source=ORIGIN,
    stats: Optional[PathStats] = None,
) -> np.ndarray:
    """Batch form of validate_path over an ImageSourceSet; returns a bool mask."""
    n = len(images)
    receiver = np.asarray(receiver, dtype=np.float64)
    planes = room.planes
    normals, offsets = planes[:, :3], planes[:, 3]

    alive = np.ones(n, dtype=bool)
    listener = np.tile(receiver, (n, 1))
    image = images.positions.copy()
    prev_wall = np.full(n, -1, dtype=np.int64)
    rejected_polygon = rejected_occlusion = 0

    for level in range(images.max_order):
        idx = np.flatnonzero(alive & (images.orders > level))
        if idx.size == 0:
            break
        w = images.sequences[idx, images.orders[idx] - 1 - level]

        crossed = np.zeros(idx.size, dtype=bool)
        q = np.empty((idx.size, 3))
        for wall_id in np.unique(w):
            sel = np.flatnonzero(w == wall_id)
            hit, _, pts = segment_hits(listener[idx[sel]], image[idx[sel]], room.walls[wall_id])
            crossed[sel] = hit
            q[sel] = pts
        rejected_polygon += int((~crossed).sum())
        alive[idx[~crossed]] = False

        idx, w, q = idx[crossed], w[crossed], q[crossed]
        blocked = _occluded(room, listener[idx], q, prev_wall[idx], w)
        rejected_occlusion += int(blocked.sum())
        alive[idx[blocked]] = False

        idx, w, q = idx[~blocked], w[~blocked], q[~blocked]
        dist = (image[idx] * normals[w]).sum(axis=1) + offsets[w]
        image[idx] = image[idx] - 2.0 * dist[:, None] * normals[w]
        listener[idx] = q
        prev_wall[idx] = w

    idx = np.flatnonzero(alive)
    ends = np.tile(np.asarray(source, dtype=np.float64), (idx.size, 1))
    blocked = _occluded(room, listener[idx], ends, prev_wall[idx], np.full(idx.size, -1))
    rejected_occlusion += int(blocked.sum())
    alive[idx[blocked]] = False

    if stats is not None:
        stats.enumerated += n
        stats.rejected_by_polygon += rejected_polygon
        stats.rejected_by_occlusion += rejected_occlusion
        stats.accepted += int(alive.sum())
    return alive


def first_order_visibility(room: RoomModel, receiver=ORIGIN) -> np.ndarray:
    """Per wall: does its first-order reflection reach the receiver?"""
    images = enumerate_image_sources(room, 1)
    return validate_paths(room, images, receiver)[1:]


def dedupe_positions(positions: np.ndarray, resolution: float = 1e-6) -> np.ndarray:
    """Indices of the first occurrence of each distinct position, in input order."""
    if len(positions) == 0:
        return np.zeros(0, dtype=np.int64)
    keys = np.round(positions / resolution).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return np.sort(first)


def _windowed_sinc(x, halfwidth: int):
    window = np.where(np.abs(x) <= halfwidth, 0.5 * (1.0 + np.cos(np.pi * x / halfwidth)), 0.0)
    return np.sinc(x) * window


def fractional_delay_kernel(delay: float, halfwidth: int) -> tuple:
    """Hann-windowed sinc centred on a fractional delay.

    Returns (first_tap, taps) where taps has 2 * halfwidth + 1 entries and
    taps[j] belongs to sample index first_tap + j.
    """
    if delay < 0:
        raise InvalidConfig(f"Delay must be >= 0, got {delay}")
    first = int(np.floor(delay)) - halfwidth
    n = first + np.arange(2 * halfwidth + 1)
    return first, _windowed_sinc(n - delay, halfwidth)


def _accumulate(delays: np.ndarray, amplitudes: np.ndarray, taps: int, halfwidth: int) -> np.ndarray:
    first = np.floor(delays).astype(np.int64) - halfwidth
    n = first[:, None] + np.arange(2 * halfwidth + 1)
    values = amplitudes[:, None] * _windowed_sinc(n - delays[:, None], halfwidth)
    inside = (n >= 0) & (n < taps)
    return np.bincount(n[inside], weights=values[inside], minlength=taps)[:taps]


def render_rir(
    room: RoomModel,
    images: ImageSourceSet,
    mics,
    cfg: SimConfig,
    stats: Optional[PathStats] = None,
) -> np.ndarray:
    """Render one channel per microphone from the paths valid at that microphone."""
    mics = np.atleast_2d(np.asarray(mics, dtype=np.float64))
    outside = ~room.contains(mics)
    if outside.any():
        raise MicOutsideRoom(f"Microphones {np.flatnonzero(outside).tolist()} are not inside the room")

    # nothing farther than this can land a kernel tap inside the response
    reach = (cfg.taps - 1 + cfg.kernel_halfwidth) * cfg.c / cfg.fs
    array_radius = float(np.linalg.norm(mics, axis=1).max())
    near = np.linalg.norm(images.positions, axis=1) - array_radius <= reach
    candidates = images.subset(near)
    if stats is not None:
        stats.pruned_by_distance += int((~near).sum()) * len(mics)

    rir = np.zeros((len(mics), cfg.taps))
    for m, mic in enumerate(mics):
        valid = validate_paths(room, candidates, mic, stats=stats)
        chosen = candidates.subset(valid)
        keep = dedupe_positions(chosen.positions, cfg.dedup_resolution)
        r = np.linalg.norm(chosen.positions[keep] - mic, axis=1)
        rir[m] = _accumulate(r * cfg.fs / cfg.c, chosen.gains[keep] / r, cfg.taps, cfg.kernel_halfwidth)
    return rir.astype(np.float32)


@dataclass(eq=False)
class RirSample:
    """One dataset element: multichannel RIR plus ground-truth walls."""

    shape_id: int
    num_walls: int
    seed: int
    A: np.ndarray
    p: np.ndarray
    rir: np.ndarray
    stats: Optional[PathStats] = field(default=None, repr=False)

    @property
    def family(self) -> str:
        return SHAPE_FAMILIES[self.shape_id]


def simulate_sample(room: RoomModel, cfg: SimConfig = SimConfig(), mics=None) -> RirSample:
    """Enumerate, render and label one room."""
    if mics is None:
        mics = mic_positions(cfg.mic_count, cfg.mic_radius)
    coeffs = room.reflection_coeffs if cfg.reflection_coeffs is None else np.asarray(cfg.reflection_coeffs)
    stats = PathStats()

    images = enumerate_image_sources(room, cfg.max_order, coeffs=coeffs)
    rir = render_rir(room, images, mics, cfg, stats=stats)
    gt = room_to_wall_matrix(room)
    logger.debug(
        "Simulated %s room seed=%d: %d images, %d accepted paths",
        room.shape_family, room.seed, len(images), stats.accepted,
    )
    return RirSample(
        shape_id=SHAPE_IDS[room.shape_family],
        num_walls=gt.num_walls,
        seed=room.seed,
        A=gt.A.astype(np.float32),
        p=gt.p.astype(np.float32),
        rir=rir,
        stats=stats,
    )
