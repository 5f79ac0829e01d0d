"""Synthetic scene generators: random door-rooms and the trap-corridor suite."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .heatmap import N_DIST_BINS
from .world import AgentPose, Bounds, Episode, FloorPlan, SceneObject, bearing_deg

OBJECT_LABELS = ("table", "chair", "sofa", "plant", "lamp", "bed", "sink", "shelf", "tv", "door mat")
_MAX_WAYPOINT_M = 0.25 * N_DIST_BINS


@dataclass
class ToyScene:
    plan: FloorPlan
    pose: AgentPose
    waypoints: List[Tuple[float, float]]  # (theta_deg relative to pose heading, dist_m)


def _wall_with_door(a, b, rng, door_prob, walls, openings):
    """Append the segment a->b, possibly split by a door; record door centers."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    length = float(np.linalg.norm(b - a))
    if rng.random() < door_prob and length > 1.6:
        width = rng.uniform(0.8, 1.2)
        start = rng.uniform(0.2, length - width - 0.2)
        u = (b - a) / length
        p1 = a + start * u
        p2 = a + (start + width) * u
        walls.append((*a, *p1))
        walls.append((*p2, *b))
        openings.append(tuple((p1 + p2) / 2))
    else:
        walls.append((*a, *b))


def relative_waypoints(pose: AgentPose, points, max_dist=_MAX_WAYPOINT_M) -> List[Tuple[float, float]]:
    out = []
    for x, z in points:
        d = math.hypot(x - pose.x, z - pose.z)
        if 1e-6 < d <= max_dist:
            out.append(((bearing_deg((pose.x, pose.z), (x, z)) - pose.heading_deg) % 360.0, d))
    return out


def random_room(rng: np.random.Generator, door_prob: float = 0.75) -> ToyScene:
    """A rotated rectangular room around the agent, doors cut into its walls.

    A larger outer shell sits 1.5-3 m beyond the room so rays through doors
    usually stop inside the sensing range.
    """
    left, right = rng.uniform(0.7, 2.6, size=2)
    back, front = rng.uniform(0.7, 2.6, size=2)
    rot = rng.uniform(0.0, 360.0)
    c, s = math.cos(math.radians(rot)), math.sin(math.radians(rot))

    def tf(x, z):
        return (x * c + z * s, -x * s + z * c)

    corners = [(-left, -back), (right, -back), (right, front), (-left, front)]
    walls, openings = [], []
    for i in range(4):
        _wall_with_door(tf(*corners[i]), tf(*corners[(i + 1) % 4]), rng, door_prob, walls, openings)
    margin = rng.uniform(1.5, 3.0)
    shell = [(-left - margin, -back - margin), (right + margin, -back - margin),
             (right + margin, front + margin), (-left - margin, front + margin)]
    for i in range(4):
        walls.append((*tf(*shell[i]), *tf(*shell[(i + 1) % 4])))
    # an interior pillar now and then
    if rng.random() < 0.4:
        px, pz = rng.uniform(-left + 0.4, right - 0.4), rng.uniform(-back + 0.4, front - 0.4)
        if math.hypot(px, pz) > 0.6:
            half = 0.15
            walls.append((*tf(px - half, pz), *tf(px + half, pz)))
            walls.append((*tf(px, pz - half), *tf(px, pz + half)))
    objects = []
    for _ in range(int(rng.integers(0, 4))):
        ox, oz = rng.uniform(-left + 0.3, right - 0.3), rng.uniform(-back + 0.3, front - 0.3)
        objects.append(SceneObject(str(rng.choice(OBJECT_LABELS)), *tf(ox, oz), 0.2))
    pts = np.array(walls).reshape(-1, 2)
    lo, hi = pts.min(axis=0) - 0.5, pts.max(axis=0) + 0.5
    plan = FloorPlan(np.array(walls), objects, Bounds(lo[0], lo[1], hi[0], hi[1]), openings)
    pose = AgentPose(0.0, 0.0, rng.uniform(0.0, 360.0))
    return ToyScene(plan, pose, relative_waypoints(pose, openings))


def random_rooms(n: int, seed: int) -> List[ToyScene]:
    rng = np.random.default_rng(seed)
    return [random_room(rng) for _ in range(n)]


def trap_corridor(variant: int = 0) -> Tuple[FloorPlan, Episode]:
    """A goal behind a slit too narrow for the agent, with a detour around.

    The agent starts in a hall south of an east-west wall. A 0.30 m slit in
    that wall looks like an opening (depth rays pass) and leads straight to
    the goal, but the 0.36 m agent cannot pass it. The real route runs west
    along the hall and back east through a wide door. From the slit, a baffle
    hides the detour, so only undoing the move helps.
    """
    rng = np.random.default_rng(1000 + variant)
    slit_x = 4.0 + rng.uniform(-0.3, 0.3)
    wall_z = 3.0 + rng.uniform(-0.15, 0.15)
    slit_w = 0.30
    door = (0.6, 1.6)
    start = AgentPose(slit_x + rng.uniform(-0.2, 0.2), wall_z - 2.0 - rng.uniform(0.0, 0.2), 0.0)
    goal = (slit_x + rng.uniform(-0.2, 0.2), wall_z + 1.4)
    top = wall_z + 3.0
    walls = [
        (0.0, 0.0, 6.0, 0.0), (6.0, 0.0, 6.0, top), (6.0, top, 0.0, top), (0.0, top, 0.0, 0.0),
        # dividing wall: door on the far west, slit near the goal
        (0.0, wall_z, door[0], wall_z),
        (door[1], wall_z, slit_x - slit_w / 2, wall_z),
        (slit_x + slit_w / 2, wall_z, 6.0, wall_z),
        # baffle hiding the western hall from the slit
        (2.6, wall_z - 1.2, 2.6, wall_z),
    ]
    openings = [
        (slit_x, wall_z + 0.6),  # beyond the slit: tempting and blocked
        (1.6, wall_z - 1.6),  # hall, west of the baffle
        ((door[0] + door[1]) / 2, wall_z),  # the wide door
        (door[1] + 0.4, wall_z + 1.2),  # north room, heading back east
        (slit_x - 0.8, wall_z + 1.3),  # north room, near the goal
    ]
    objects = [
        SceneObject("plant", goal[0] + 0.8, goal[1] + 0.8, 0.2),
        SceneObject("sofa", 0.8, top - 0.6, 0.3),
        SceneObject("chair", 5.2, 0.6, 0.2),
    ]
    plan = FloorPlan(np.array(walls), objects, Bounds(0.0, 0.0, 6.0, top), openings)
    episode = Episode(
        f"trap-{variant:02d}",
        start,
        goal,
        "Go through the door on the left, then walk to the plant in the far room.",
    )
    return plan, episode
