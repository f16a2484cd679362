"""
Planes, wall polygons and rooms in device-centred coordinates.

Every room is a vertical prism: a floor outline extruded between z = -Lz/2 and
z = +Lz/2, so the loudspeaker/array device sits at the origin. Walls are kept
in a fixed order (floor, ceiling, then the side walls along the outline) and
that order is the row order of the ground-truth wall matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
import shapely
import trimesh
from shapely.geometry import Polygon

from rgi.errors import DegeneratePolygon, InvalidConfig

logger = logging.getLogger(__name__)

TOL = 1e-9
WPRIME = 8
SHAPE_FAMILIES = ("shoebox", "pentagonal", "hexagonal", "l_shaped")
FAMILY_LABELS = {
    "shoebox": "Shoebox",
    "pentagonal": "Pentagonal",
    "hexagonal": "Hexagonal",
    "l_shaped": "L-shaped",
}

BBOX_RANGES = ((4.0, 10.0), (4.0, 10.0), (3.0, 5.0))
REFLECTION_RANGE = (0.7, 0.95)
CHORD_CUT_RANGE = (0.3, 0.7)
NOTCH_CUT_RANGE = (0.3, 0.5)
# keeps every convex-room wall first-order visible from any capsule of the array
VISIBILITY_MARGIN = 0.1
MAX_CUT_ATTEMPTS = 1000

MIC_COUNT = 32
MIC_RADIUS = 0.042


@dataclass(frozen=True, eq=False)
class WallPlane:
    """Plane n.x + d = 0 with a unit normal pointing at the device."""

    normal: np.ndarray
    d: float

    @property
    def coeffs(self) -> np.ndarray:
        return np.append(self.normal, self.d)

    @classmethod
    def from_coeffs(cls, coeffs) -> "WallPlane":
        a = np.asarray(coeffs, dtype=np.float64)
        return cls(normal=a[:3].copy(), d=float(a[3]))


class Hit(NamedTuple):
    point: np.ndarray
    t: float


def plane_from_polygon(vertices) -> WallPlane:
    """Fit the plane of an ordered, coplanar outline and orient it toward the origin."""
    v = np.asarray(vertices, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 3 or len(v) < 3:
        raise DegeneratePolygon(f"Need at least 3 points in R^3, got shape {v.shape}")

    # Newell's method, valid for non-convex outlines too
    normal = np.cross(v, np.roll(v, -1, axis=0)).sum(axis=0)
    norm = np.linalg.norm(normal)
    if norm < TOL:
        raise DegeneratePolygon("Polygon vertices are collinear")
    normal = normal / norm

    d = -float(normal @ v.mean(axis=0))
    if abs(d) < TOL:
        raise DegeneratePolygon("Polygon plane passes through the device origin")
    if d < 0:
        normal, d = -normal, -d

    residual = float(np.abs(v @ normal + d).max())
    if residual > TOL:
        raise DegeneratePolygon(f"Polygon vertices are not coplanar (residual {residual:.3g} m)")
    return WallPlane(normal=normal, d=d)


def signed_distance(plane: WallPlane, q):
    return np.asarray(q, dtype=np.float64) @ plane.normal + plane.d


def reflect_point(plane: WallPlane, s) -> np.ndarray:
    """Mirror one point (3,) or a stack of points (N, 3) across the plane."""
    s = np.asarray(s, dtype=np.float64)
    dist = np.asarray(signed_distance(plane, s))
    return s - 2.0 * dist[..., None] * plane.normal


@dataclass(eq=False)
class WallPolygon:
    """Finite wall: an ordered planar outline and the plane it lies on."""

    vertices: np.ndarray
    plane: WallPlane
    _origin: np.ndarray = field(init=False, repr=False)
    _axes: np.ndarray = field(init=False, repr=False)
    _outline: Polygon = field(init=False, repr=False)
    _region: Polygon = field(init=False, repr=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self._origin = self.vertices[0]
        u = self.vertices[1] - self.vertices[0]
        u = u / np.linalg.norm(u)
        w = np.cross(self.plane.normal, u)
        self._axes = np.stack([u, w], axis=1)
        self._outline = Polygon(self.to_plane_coords(self.vertices))
        # edges count as inside within TOL
        self._region = self._outline.buffer(TOL, join_style="mitre")
        shapely.prepare(self._region)

    @classmethod
    def from_vertices(cls, vertices) -> "WallPolygon":
        return cls(vertices=vertices, plane=plane_from_polygon(vertices))

    @property
    def area(self) -> float:
        return float(self._outline.area)

    def to_plane_coords(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self._origin) @ self._axes

    def contains(self, points) -> np.ndarray:
        """In-polygon test for points already lying on the wall plane."""
        xy = self.to_plane_coords(np.atleast_2d(points))
        return shapely.intersects_xy(self._region, xy[:, 0], xy[:, 1])


def ray_polygon_intersect(origin, target, poly: WallPolygon) -> Optional[Hit]:
    """Crossing of the open segment origin->target with a finite wall, if any."""
    hit, t, points = segment_hits(np.atleast_2d(origin), np.atleast_2d(target), poly)
    if not hit[0]:
        return None
    return Hit(point=points[0], t=float(t[0]))


def segment_hits(origins: np.ndarray, targets: np.ndarray, poly: WallPolygon):
    """Vectorized ray_polygon_intersect over (M, 3) segment endpoints.

    Returns (hit mask, t, crossing points); t and points are meaningless where
    the mask is False.
    """
    n, d = poly.plane.normal, poly.plane.d
    direction = targets - origins
    denom = direction @ n
    num = -(origins @ n + d)
    parallel = np.abs(denom) < 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(parallel, -1.0, num / np.where(parallel, 1.0, denom))
    hit = (t > TOL) & (t < 1.0 - TOL)
    points = origins + t[:, None] * direction
    if hit.any():
        idx = np.flatnonzero(hit)
        hit[idx] = poly.contains(points[idx])
    return hit, t, points


@dataclass(eq=False)
class RoomModel:
    """Closed prism room; the device sits at the origin."""

    walls: list
    shape_family: str
    bbox: tuple
    seed: int
    footprint: np.ndarray
    reflection_coeffs: np.ndarray
    _outline: Polygon = field(init=False, repr=False)

    def __post_init__(self):
        self.footprint = np.asarray(self.footprint, dtype=np.float64)
        self.reflection_coeffs = np.asarray(self.reflection_coeffs, dtype=np.float64)
        if len(self.reflection_coeffs) != len(self.walls):
            raise InvalidConfig(
                f"Need one reflection coefficient per wall, got {len(self.reflection_coeffs)} for {len(self.walls)} walls"
            )
        self._outline = Polygon(self.footprint)
        shapely.prepare(self._outline)

    @property
    def num_walls(self) -> int:
        return len(self.walls)

    @property
    def height(self) -> float:
        return float(self.bbox[2])

    @property
    def planes(self) -> np.ndarray:
        """(W, 4) stacked plane coefficients in wall order."""
        return np.stack([wall.plane.coeffs for wall in self.walls])

    def contains(self, points) -> np.ndarray:
        """Strict interior test."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        inside_z = np.abs(p[:, 2]) < self.height / 2.0 - TOL
        inside_xy = shapely.contains_xy(self._outline, p[:, 0], p[:, 1])
        return inside_z & inside_xy

    def is_convex(self) -> bool:
        vertices = np.concatenate([wall.vertices for wall in self.walls])
        planes = self.planes
        dist = vertices @ planes[:, :3].T + planes[:, 3]
        return bool((dist >= -TOL).all())

    def edge_counts(self) -> dict:
        """How many wall outlines use each undirected edge."""
        counts: dict = {}
        for wall in self.walls:
            keys = [tuple(np.round(v, 9)) for v in wall.vertices]
            for a, b in zip(keys, keys[1:] + keys[:1]):
                edge = (a, b) if a <= b else (b, a)
                counts[edge] = counts.get(edge, 0) + 1
        return counts

    def is_closed(self) -> bool:
        return all(count == 2 for count in self.edge_counts().values())


@dataclass
class WallMatrix:
    A: np.ndarray
    p: np.ndarray
    num_walls: int


def _rectangle(lx: float, ly: float) -> np.ndarray:
    return np.array(
        [[-lx / 2, -ly / 2], [lx / 2, -ly / 2], [lx / 2, ly / 2], [-lx / 2, ly / 2]],
        dtype=np.float64,
    )


def chord_cut(outline: np.ndarray, corner: int, u: float, v: float) -> np.ndarray:
    """Replace one corner by a chord at fractions u (toward the previous
    vertex) and v (toward the next vertex) of its adjacent edges."""
    k = len(outline)
    c, prev, nxt = outline[corner], outline[corner - 1], outline[(corner + 1) % k]
    a = c + u * (prev - c)
    b = c + v * (nxt - c)
    return np.vstack([outline[:corner], a, b, outline[corner + 1:]])


def notch_cut(outline: np.ndarray, corner: int, u: float, v: float) -> np.ndarray:
    """Remove a corner rectangle spanning fractions u and v of the adjacent edges."""
    k = len(outline)
    c, prev, nxt = outline[corner], outline[corner - 1], outline[(corner + 1) % k]
    a = c + u * (prev - c)
    b = c + v * (nxt - c)
    inner = a + v * (nxt - c)
    return np.vstack([outline[:corner], a, inner, b, outline[corner + 1:]])


def edges_visible_from_origin(outline: np.ndarray, margin: float = 0.0) -> bool:
    """True when the perpendicular foot from the origin falls inside every edge."""
    a = outline
    e = np.roll(outline, -1, axis=0) - a
    length = np.linalg.norm(e, axis=1)
    along = -(a * e).sum(axis=1) / length
    return bool(((along > margin) & (along < length - margin)).all())


def _draw_chord_cut(rng: np.random.Generator, outline: np.ndarray, corner: int) -> np.ndarray:
    for _ in range(MAX_CUT_ATTEMPTS):
        u, v = rng.uniform(*CHORD_CUT_RANGE, size=2)
        cut = chord_cut(outline, corner, u, v)
        if edges_visible_from_origin(cut, VISIBILITY_MARGIN):
            return cut
    raise InvalidConfig(f"No visible chord cut found for corner {corner} in {MAX_CUT_ATTEMPTS} draws")


def room_from_footprint(
    footprint,
    height: float,
    shape_family: str,
    seed: int = 0,
    reflection_coeffs=None,
) -> RoomModel:
    """Extrude a floor outline centred on the device into a closed room."""
    fp = np.asarray(footprint, dtype=np.float64)
    if not Polygon(fp).exterior.is_ccw:
        fp = fp[::-1].copy()
    h = height / 2.0

    floor = WallPolygon.from_vertices(np.column_stack([fp, np.full(len(fp), -h)]))
    ceiling = WallPolygon.from_vertices(np.column_stack([fp, np.full(len(fp), h)]))
    sides = [
        WallPolygon.from_vertices(np.array([[*a, -h], [*b, -h], [*b, h], [*a, h]]))
        for a, b in zip(fp, np.roll(fp, -1, axis=0))
    ]
    walls = [floor, ceiling, *sides]

    if reflection_coeffs is None:
        reflection_coeffs = np.ones(len(walls))
    extent = fp.max(axis=0) - fp.min(axis=0)
    return RoomModel(
        walls=walls,
        shape_family=shape_family,
        bbox=(float(extent[0]), float(extent[1]), float(height)),
        seed=int(seed),
        footprint=fp,
        reflection_coeffs=reflection_coeffs,
    )


def sample_room(family: str, rng_seed: int, reflection_range=REFLECTION_RANGE) -> RoomModel:
    """Draw a random room of one shape family; deterministic in rng_seed."""
    if family not in SHAPE_FAMILIES:
        raise InvalidConfig(f"Unknown shape family '{family}'. Must be one of {SHAPE_FAMILIES}")

    rng = np.random.default_rng(rng_seed)
    lx = rng.uniform(*BBOX_RANGES[0])
    ly = rng.uniform(*BBOX_RANGES[1])
    lz = rng.uniform(*BBOX_RANGES[2])
    outline = _rectangle(lx, ly)

    if family == "pentagonal":
        outline = _draw_chord_cut(rng, outline, int(rng.integers(4)))
    elif family == "hexagonal":
        corner = int(rng.integers(2))
        # cut the higher index first so the lower one keeps its position
        outline = _draw_chord_cut(rng, outline, corner + 2)
        outline = _draw_chord_cut(rng, outline, corner)
    elif family == "l_shaped":
        corner = int(rng.integers(4))
        u, v = rng.uniform(*NOTCH_CUT_RANGE, size=2)
        outline = notch_cut(outline, corner, u, v)

    coeffs = rng.uniform(*reflection_range, size=len(outline) + 2)
    room = room_from_footprint(outline, lz, family, seed=rng_seed, reflection_coeffs=coeffs)
    logger.debug("Sampled %s room seed=%d bbox=%s", family, rng_seed, room.bbox)
    return room


def room_to_wall_matrix(room: RoomModel, wprime: int = WPRIME) -> WallMatrix:
    """Ground-truth wall matrix: one plane per row in wall order, zero padded."""
    if room.num_walls > wprime:
        raise InvalidConfig(f"Room has {room.num_walls} walls, more than W'={wprime}")
    A = np.zeros((wprime, 4))
    A[: room.num_walls] = room.planes
    p = np.zeros(wprime)
    p[: room.num_walls] = 1.0
    return WallMatrix(A=A, p=p, num_walls=room.num_walls)


def mic_positions(count: int = MIC_COUNT, radius: float = MIC_RADIUS) -> np.ndarray:
    """Golden-spiral capsule layout on a sphere around the origin, (count, 3)."""
    if count < 2:
        raise InvalidConfig(f"Need at least 2 microphones, got {count}")
    i = np.arange(count)
    z = 1.0 - 2.0 * (i + 0.5) / count
    golden = (1.0 + np.sqrt(5.0)) / 2.0
    azimuth = 2.0 * np.pi * i * (1.0 - 1.0 / golden)
    rho = np.sqrt(1.0 - z**2)
    return radius * np.column_stack([rho * np.cos(azimuth), rho * np.sin(azimuth), z])


def _fan_triangles(vertices: np.ndarray, normal: np.ndarray) -> list:
    """Fan-triangulate from a vertex that sees the whole outline, outward winding."""
    k = len(vertices)
    orientation = np.sign(np.cross(vertices, np.roll(vertices, -1, axis=0)).sum(axis=0) @ normal)
    for apex in range(k):
        tris = [(apex, (apex + j) % k, (apex + j + 1) % k) for j in range(1, k - 1)]
        signs = [
            np.cross(vertices[b] - vertices[a], vertices[c] - vertices[a]) @ normal * orientation
            for a, b, c in tris
        ]
        if min(signs) > TOL:
            # plane normals point into the room; mesh faces point out of it
            if orientation > 0:
                tris = [(a, c, b) for a, b, c in tris]
            return tris
    raise DegeneratePolygon("Wall outline has no fan apex")


def room_mesh(room: RoomModel) -> trimesh.Trimesh:
    """Triangulated closed surface of the room."""
    vertices, faces = [], []
    offset = 0
    for wall in room.walls:
        tris = _fan_triangles(wall.vertices, wall.plane.normal)
        vertices.append(wall.vertices)
        faces.extend((a + offset, b + offset, c + offset) for a, b, c in tris)
        offset += len(wall.vertices)
    mesh = trimesh.Trimesh(vertices=np.concatenate(vertices), faces=np.array(faces), process=True)
    mesh.merge_vertices()
    return mesh


def room_invariant_violations(room: RoomModel) -> list:
    """List the RoomModel invariants a room breaks; empty when valid."""
    problems = []
    if room.num_walls not in (6, 7, 8):
        problems.append(f"wall count {room.num_walls} not in (6, 7, 8)")
    if not room.is_closed():
        problems.append("an outline edge is not shared by exactly two walls")
    planes = room.planes
    if not np.allclose(np.linalg.norm(planes[:, :3], axis=1), 1.0, atol=TOL):
        problems.append("non-unit wall normal")
    if (planes[:, 3] <= 0).any():
        problems.append("device origin not strictly inside every wall half-space")
    if not room.contains(np.zeros(3))[0]:
        problems.append("device origin outside the room outline")
    for idx in (0, 1):
        if not np.allclose(np.abs(planes[idx, :3]), [0.0, 0.0, 1.0], atol=TOL):
            problems.append(f"wall {idx} is not horizontal")
    for idx, wall in enumerate(room.walls):
        if np.abs(wall.vertices @ wall.plane.normal + wall.plane.d).max() > TOL:
            problems.append(f"wall {idx} vertex off its plane")
    mesh = room_mesh(room)
    if not mesh.is_watertight:
        problems.append("room mesh is not watertight")
    return problems
