"""Planar floor plans: raycast depth rendering, disc-agent motion, geodesics.

A floor plan is a set of zero-thickness wall segments inside an axis-aligned
rectangle. Objects are labels with a position and radius; they are seen by
the scene tagger but do not block rays or motion. ``openings`` are marked
door/passage centers, used to build ground-truth waypoints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import PoseError, ValidationError
from .geometry import (
    MAX_RANGE_M,
    N_VIEWS,
    VIEW_STEP_DEG,
    DepthCamera,
    DepthImage,
    DepthPanorama,
)

AGENT_RADIUS_M = 0.18
GRID_RESOLUTION_M = 0.05
_SKIN = 1e-6  # extra clearance kept by step_to so float error never dips below the radius
_ON_WALL = 1e-9


@dataclass(frozen=True)
class Bounds:
    xmin: float
    zmin: float
    xmax: float
    zmax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.zmax > self.zmin):
            raise ValidationError(f"degenerate bounds {self}")

    def contains(self, x, z, tol=1e-9) -> bool:
        return (self.xmin - tol <= x <= self.xmax + tol) and (self.zmin - tol <= z <= self.zmax + tol)

    def edges(self) -> np.ndarray:
        a, b, c, d = self.xmin, self.zmin, self.xmax, self.zmax
        return np.array([[a, b, c, b], [c, b, c, d], [c, d, a, d], [a, d, a, b]], dtype=np.float64)


@dataclass(frozen=True)
class SceneObject:
    label: str
    x: float
    z: float
    radius: float

    def __post_init__(self):
        if not self.label or not self.label.strip():
            raise ValidationError("object label must be non-empty")
        if not self.radius > 0:
            raise ValidationError(f"object {self.label!r} radius must be positive")


@dataclass(eq=False)
class FloorPlan:
    walls: np.ndarray
    objects: List[SceneObject] = field(default_factory=list)
    bounds: Optional[Bounds] = None
    openings: List[Tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        w = np.asarray(self.walls, dtype=np.float64).reshape(-1, 4)
        self.walls = w
        self.objects = list(self.objects)
        self.openings = [(float(x), float(z)) for x, z in self.openings]
        if self.bounds is None:
            raise ValidationError("floor plan needs bounds")
        for i, (x1, z1, x2, z2) in enumerate(w):
            if not (self.bounds.contains(x1, z1) and self.bounds.contains(x2, z2)):
                raise ValidationError(f"wall {i} lies outside bounds")
        for o in self.objects:
            if not self.bounds.contains(o.x, o.z):
                raise ValidationError(f"object {o.label!r} lies outside bounds")
        for x, z in self.openings:
            if not self.bounds.contains(x, z):
                raise ValidationError(f"opening ({x}, {z}) lies outside bounds")
        self._collision = np.vstack([w, self.bounds.edges()])
        self._grid = None

    @property
    def grid(self) -> "GeodesicGrid":
        if self._grid is None:
            self._grid = GeodesicGrid(self)
        return self._grid


@dataclass(frozen=True)
class AgentPose:
    x: float
    z: float
    heading_deg: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading_deg", float(self.heading_deg) % 360.0)

    @property
    def xz(self) -> np.ndarray:
        return np.array([self.x, self.z], dtype=np.float64)


@dataclass(frozen=True)
class Episode:
    id: str
    start: AgentPose
    goal: Tuple[float, float]
    instruction: str = ""


@dataclass(frozen=True)
class StepOutcome:
    new_pose: AgentPose
    collided: bool
    distance_traveled: float


@dataclass(frozen=True)
class VisibleObject:
    label: str
    bearing_deg: float
    distance: float


def heading_vector(deg) -> np.ndarray:
    a = np.radians(deg)
    return np.stack([np.sin(a), np.cos(a)], axis=-1)


def bearing_deg(src, dst) -> float:
    return math.degrees(math.atan2(dst[0] - src[0], dst[1] - src[1])) % 360.0


def segment_distances(segs: np.ndarray, pts) -> np.ndarray:
    """Distances from each point to each segment, shape ``(npts, nsegs)``."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    if len(segs) == 0:
        return np.full((len(pts), 0), np.inf)
    a = segs[None, :, 0:2]
    e = segs[None, :, 2:4] - a
    rel = pts[:, None, :] - a
    ee = np.einsum("psk,psk->ps", e, e)
    t = np.clip(np.einsum("psk,psk->ps", rel, e) / np.where(ee > 0, ee, 1.0), 0.0, 1.0)
    closest = a + t[..., None] * e
    return np.linalg.norm(pts[:, None, :] - closest, axis=-1)


def segment_clear(segs: np.ndarray, a, b, radius: float) -> bool:
    """True when the straight path a->b stays ``radius`` away from every segment."""
    if len(segs) == 0:
        return True
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    # two segments that do not cross are closest at one of the four endpoints
    if segment_distances(segs, np.stack([a, b])).min() < radius:
        return False
    if segment_distances(np.array([[*a, *b]]), segs.reshape(-1, 2)).min() < radius:
        return False
    p, q = segs[:, 0:2], segs[:, 2:4]

    def orient(u, v, w):
        return np.sign((v[..., 0] - u[..., 0]) * (w[..., 1] - u[..., 1]) - (v[..., 1] - u[..., 1]) * (w[..., 0] - u[..., 0]))

    crosses = (orient(a, b, p) * orient(a, b, q) < 0) & (orient(p, q, a) * orient(p, q, b) < 0)
    return not crosses.any()


def clearance(plan: FloorPlan, pts) -> np.ndarray:
    """Distance from each point to the nearest wall (bounds excluded)."""
    d = segment_distances(plan.walls, pts)
    return d.min(axis=1) if d.shape[1] else np.full(d.shape[0], np.inf)


def check_free(plan: FloorPlan, point, what="point"):
    x, z = float(point[0]), float(point[1])
    if not plan.bounds.contains(x, z):
        raise PoseError(f"{what} ({x:.3f}, {z:.3f}) lies outside the plan bounds")
    if clearance(plan, [(x, z)])[0] < _ON_WALL:
        raise PoseError(f"{what} ({x:.3f}, {z:.3f}) lies on a wall")


def raycast_many(plan: FloorPlan, origin, directions_deg, max_range: float = MAX_RANGE_M) -> np.ndarray:
    """Horizontal range to the first wall along each direction, clamped to ``max_range``."""
    o = np.asarray(origin, dtype=np.float64)
    d = heading_vector(np.atleast_1d(np.asarray(directions_deg, dtype=np.float64)))
    w = plan.walls
    out = np.full(len(d), float(max_range))
    if len(w) == 0:
        return out
    p = w[:, 0:2]
    e = w[:, 2:4] - p
    po = p - o  # (nw, 2)
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
    ok = np.abs(denom) > 1e-12
    safe = np.where(ok, denom, 1.0)
    t = (po[None, :, 0] * e[None, :, 1] - po[None, :, 1] * e[None, :, 0]) / safe
    s = (po[None, :, 0] * d[:, None, 1] - po[None, :, 1] * d[:, None, 0]) / safe
    hit = ok & (t >= 0.0) & (s >= -1e-12) & (s <= 1.0 + 1e-12)
    t = np.where(hit, t, np.inf)
    return np.minimum(t.min(axis=1), max_range)


def raycast(plan: FloorPlan, origin, direction_deg: float, max_range: float = MAX_RANGE_M) -> float:
    check_free(plan, origin, "ray origin")
    return float(raycast_many(plan, origin, [direction_deg], max_range)[0])


def render_depth_panorama(
    plan: FloorPlan, pose: AgentPose, camera: DepthCamera = DepthCamera(), max_range: float = MAX_RANGE_M
) -> DepthPanorama:
    """Twelve depth views at ``pose.heading + 30 i``.

    Walls are full height, so the horizontal range is shared by a whole
    column; each pixel stores the Euclidean length of its own (pitched) ray
    to that wall, ``range / cos(elevation)``.
    """
    check_free(plan, (pose.x, pose.z), "pose")
    origin = (pose.x, pose.z)
    inv_cos_el = 1.0 / np.cos(np.radians(camera.row_elevations()))
    col_az = camera.column_azimuths()
    views = []
    for i in range(N_VIEWS):
        heading = pose.heading_deg + VIEW_STEP_DEG * i
        ranges = raycast_many(plan, origin, heading + col_az, max_range)
        views.append(DepthImage(inv_cos_el[:, None] * ranges[None, :], heading))
    return DepthPanorama(tuple(views))


def visible_objects(plan: FloorPlan, pose: AgentPose, view_index: int, hfov_deg: float = 90.0) -> List[VisibleObject]:
    """Ground-truth scene tags for one panorama view, nearest first."""
    if not 0 <= view_index < N_VIEWS:
        raise IndexError(f"view index {view_index} out of range")
    view_heading = pose.heading_deg + VIEW_STEP_DEG * view_index
    found = []
    for obj in plan.objects:
        dx, dz = obj.x - pose.x, obj.z - pose.z
        dist = math.hypot(dx, dz)
        if dist < 1e-9:
            continue
        bearing = math.degrees(math.atan2(dx, dz)) % 360.0
        rel = (bearing - view_heading + 180.0) % 360.0 - 180.0
        if not (-hfov_deg / 2 <= rel < hfov_deg / 2):
            continue
        if raycast_many(plan, (pose.x, pose.z), [bearing], dist + 1.0)[0] <= dist:
            continue
        found.append(VisibleObject(obj.label, bearing, dist))
    found.sort(key=lambda v: (v.distance, v.label))
    return found


def _first_contact(segs: np.ndarray, p: np.ndarray, u: np.ndarray, length: float, r: float) -> float:
    """Travel along unit ``u`` from ``p`` before a disc of radius ``r`` touches a segment."""
    best = length
    for x1, z1, x2, z2 in segs:
        a = np.array([x1, z1])
        b = np.array([x2, z2])
        e = b - a
        seg_len = math.hypot(*e)
        candidates = []
        if seg_len > 0:
            t_dir = e / seg_len
            n = np.array([-t_dir[1], t_dir[0]])
            s0 = float(np.dot(p - a, n))
            if s0 < 0:
                n, s0 = -n, -s0
            vn = float(np.dot(u, n))
            if vn < 0:
                t_hit = 0.0 if s0 <= r else (s0 - r) / -vn
                along = float(np.dot(p + t_hit * u - a, t_dir))
                if 0.0 <= along <= seg_len:
                    candidates.append(t_hit)
        for c in (a, b):
            f = p - c
            bq = float(np.dot(f, u))
            cq = float(np.dot(f, f)) - r * r
            if bq >= 0:
                continue  # moving away from this endpoint
            if cq <= 0:
                candidates.append(0.0)
                continue
            disc = bq * bq - cq
            if disc >= 0:
                candidates.append(-bq - math.sqrt(disc))
        for t in candidates:
            if 0.0 <= t < best:
                best = t
    return best


def step_to(pose: AgentPose, target, plan: FloorPlan, radius: float = AGENT_RADIUS_M) -> StepOutcome:
    """Straight-line move of the agent disc toward ``target``.

    Motion stops where the disc would first touch a wall or the bounds; the
    heading turns to the direction of travel.
    """
    p = pose.xz
    delta = np.asarray(target, dtype=np.float64) - p
    length = float(np.hypot(*delta))
    if length < 1e-12:
        return StepOutcome(pose, False, 0.0)
    u = delta / length
    travel = _first_contact(plan._collision, p, u, length, radius + _SKIN)
    collided = travel < length
    end = p + travel * u if collided else np.asarray(target, dtype=np.float64)
    heading = math.degrees(math.atan2(u[0], u[1])) % 360.0
    return StepOutcome(AgentPose(float(end[0]), float(end[1]), heading), bool(collided), float(travel))


# half of a 32-direction neighbourhood; the reverse moves come from symmetry.
# Moves up to (3, 2) keep the direction bias of grid paths near 1.3 %.
MOVES = ((1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (1, 2), (2, -1), (1, -2),
         (3, 1), (1, 3), (3, -1), (1, -3), (3, 2), (2, 3), (3, -2), (2, -3))


def _swept_cells(dx: int, dz: int):
    """Cell offsets touched by the segment between two cell centers.

    A segment running exactly along a cell border needs both neighbours, so
    a diagonal never squeezes between two blocked cells.
    """
    def span(c):
        v = c + 0.5
        r = round(v)
        return (r - 1, r) if abs(v - r) < 1e-9 else (math.floor(v),)

    n = 12 * max(abs(dx), abs(dz))
    out = set()
    for i in range(n + 1):
        t = i / n
        for ox in span(t * dx):
            for oz in span(t * dz):
                out.add((ox, oz))
    return sorted(out)


class GeodesicGrid:
    """Occupancy grid over the plan for shortest-path lengths.

    A cell is free when its center keeps the agent radius clear of every
    wall. Edges join cells along 32 directions and are valid only if every
    cell the edge sweeps is free.
    """
    def __init__(self, plan: FloorPlan, resolution: float = GRID_RESOLUTION_M, radius: float = AGENT_RADIUS_M):
        self.plan = plan
        self.res = resolution
        self.radius = radius
        b = plan.bounds
        self.nx = max(1, int(math.ceil((b.xmax - b.xmin) / resolution)))
        self.nz = max(1, int(math.ceil((b.zmax - b.zmin) / resolution)))
        ix, iz = np.meshgrid(np.arange(self.nx), np.arange(self.nz), indexing="ij")
        centers = np.stack([b.xmin + (ix + 0.5) * resolution, b.zmin + (iz + 0.5) * resolution], axis=-1)
        self.centers = centers.reshape(-1, 2)
        cl = np.full(len(self.centers), np.inf)
        for chunk in range(0, len(self.centers), 20000):
            cl[chunk:chunk + 20000] = clearance(plan, self.centers[chunk:chunk + 20000])
        self.free = (cl >= radius).reshape(self.nx, self.nz)
        self.graph = self._build_graph()
        self._fields: Dict[int, np.ndarray] = {}

    def _build_graph(self):
        rows, cols, vals = [], [], []
        pad = 3
        free = np.pad(self.free, pad, constant_values=False)
        idx = np.arange(self.nx * self.nz).reshape(self.nx, self.nz)
        nx, nz = self.nx, self.nz
        for dx, dz in MOVES:
            ok = np.ones((nx, nz), dtype=bool)
            for ox, oz in _swept_cells(dx, dz):
                ok &= free[pad + ox:pad + ox + nx, pad + oz:pad + oz + nz]
            a = idx[ok]
            if not len(a):
                continue
            ia, iz = np.divmod(a, nz)
            b = (ia + dx) * nz + (iz + dz)
            cost = self.res * math.hypot(dx, dz)
            rows += [a, b]
            cols += [b, a]
            vals += [np.full(len(a), cost), np.full(len(a), cost)]
        n = nx * nz
        r = np.concatenate(rows) if rows else np.zeros(0, int)
        c = np.concatenate(cols) if cols else np.zeros(0, int)
        v = np.concatenate(vals) if vals else np.zeros(0)
        return coo_matrix((v, (r, c)), shape=(n, n)).tocsr()

    def _index(self, point):
        b = self.plan.bounds
        return (float(point[0]) - b.xmin) / self.res - 0.5, (float(point[1]) - b.zmin) / self.res - 0.5

    def anchor_cells(self, point) -> List[int]:
        """Free cells whose centers surround ``point``; else the nearest free cell within 0.3 m."""
        fx, fz = self._index(point)
        x0, z0 = int(math.floor(fx)), int(math.floor(fz))
        cells = []
        for ix in (x0, x0 + 1):
            for iz in (z0, z0 + 1):
                if 0 <= ix < self.nx and 0 <= iz < self.nz and self.free[ix, iz]:
                    cells.append(ix * self.nz + iz)
        if cells:
            return cells
        x, z = float(point[0]), float(point[1])
        reach = int(math.ceil(0.3 / self.res)) + 1
        xa, xb = max(x0 - reach, 0), min(x0 + reach + 2, self.nx)
        za, zb = max(z0 - reach, 0), min(z0 + reach + 2, self.nz)
        sub = self.free[xa:xb, za:zb]
        if not sub.any():
            return []
        cand = np.argwhere(sub) + [xa, za]
        flat = cand[:, 0] * self.nz + cand[:, 1]
        d = np.linalg.norm(self.centers[flat] - [x, z], axis=1)
        best = int(np.argmin(d))
        return [int(flat[best])] if d[best] <= 0.3 + 1e-9 else []

    def field(self, cell: int) -> np.ndarray:
        f = self._fields.get(cell)
        if f is None:
            f = dijkstra(self.graph, directed=False, indices=cell)
            self._fields[cell] = f
        return f

    def distance(self, a, b) -> float:
        check_free(self.plan, a, "geodesic endpoint")
        check_free(self.plan, b, "geodesic endpoint")
        pa = (float(a[0]), float(a[1]))
        pb = (float(b[0]), float(b[1]))
        if segment_clear(self.plan.walls, pa, pb, self.radius):
            return math.dist(pa, pb)
        cas, cbs = self.anchor_cells(pa), self.anchor_cells(pb)
        best = math.inf
        for cb in cbs:
            f = self.field(cb)
            off_b = math.dist(self.centers[cb], pb)
            for ca in cas:
                d = f[ca] + math.dist(self.centers[ca], pa) + off_b
                if d < best:
                    best = float(d)
        return best


def geodesic_distance(plan: FloorPlan, a, b) -> float:
    """Shortest obstacle-avoiding path length from ``a`` to ``b``; ``inf`` if disconnected."""
    return plan.grid.distance(a, b)


def rotate_plan(plan: FloorPlan, center, degrees: float) -> FloorPlan:
    """Rotate a plan clockwise by ``degrees`` about ``center`` (bounds grow to fit)."""
    c = np.asarray(center, dtype=np.float64)
    a = math.radians(degrees)
    # clockwise in this frame: (x, z) -> heading + degrees
    rot = np.array([[math.cos(a), math.sin(a)], [-math.sin(a), math.cos(a)]])

    def tf(pts):
        return (np.asarray(pts, dtype=np.float64).reshape(-1, 2) - c) @ rot.T + c

    walls = np.hstack([tf(plan.walls[:, 0:2]), tf(plan.walls[:, 2:4])]) if len(plan.walls) else plan.walls
    corners = tf(plan.bounds.edges()[:, 0:2])
    bounds = Bounds(corners[:, 0].min(), corners[:, 1].min(), corners[:, 0].max(), corners[:, 1].max())
    objects = [SceneObject(o.label, *tf([(o.x, o.z)])[0], o.radius) for o in plan.objects]
    openings = [tuple(p) for p in tf(plan.openings)] if plan.openings else []
    return FloorPlan(walls, objects, bounds, openings)
