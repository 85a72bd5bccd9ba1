"""Spatial primitives: distances, the body-disk collision test, hull area and density."""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import EmptySnapshot

DEFAULT_RADIUS = 0.2
MAX_RADIUS = 0.5
MIN_SCENE_AREA = 1.0  # m^2, floor for degenerate hulls


class Position(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class BodyDisk:
    center: Position
    radius: float = DEFAULT_RADIUS

    def __post_init__(self):
        if not 0.0 < self.radius <= MAX_RADIUS:
            raise ValueError(f"radius must lie in (0, {MAX_RADIUS}], got {self.radius}")

    def overlaps(self, other):
        return euclidean_distance(self.center, other.center) < self.radius + other.radius


@dataclass(frozen=True)
class FrameSnapshot:
    frame: int
    agents: tuple  # of (agent_id, Position)

    def __post_init__(self):
        ids = [a for a, _ in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate agent ids in frame {self.frame}")

    @property
    def positions(self):
        return np.array([tuple(p) for _, p in self.agents], dtype=np.float64).reshape(-1, 2)


def euclidean_distance(p, q):
    return math.hypot(p[0] - q[0], p[1] - q[1])


def collision_indicator(p_i, p_j, radius=DEFAULT_RADIUS):
    """1 when the two body disks intersect (centers strictly closer than 2R)."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    return int(euclidean_distance(p_i, p_j) < 2.0 * radius)


def pairwise_distances(points):
    """(n, n) matrix of Euclidean distances for an (n, 2) array."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points):
    """Hull vertices in counter-clockwise order (Andrew's monotone chain).

    Collinear boundary points are dropped; fewer than three distinct
    non-collinear points give a degenerate (< 3 vertex) hull.
    """
    pts = sorted({(float(x), float(y)) for x, y in np.asarray(points, dtype=np.float64).reshape(-1, 2)})
    if len(pts) <= 2:
        return pts
    lower = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def polygon_area(vertices):
    if len(vertices) < 3:
        return 0.0
    v = np.asarray(vertices, dtype=np.float64)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def convex_hull_area(points):
    return polygon_area(convex_hull(points))


def density_of_points(points, min_area=MIN_SCENE_AREA):
    """Agents per square meter over the (clamped) convex hull of ``points``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise EmptySnapshot("density of an empty set of agents")
    return len(pts) / max(convex_hull_area(pts), min_area)


def snapshot_density(snapshot):
    if not snapshot.agents:
        raise EmptySnapshot(f"frame {snapshot.frame} has no agents")
    return density_of_points(snapshot.positions)
