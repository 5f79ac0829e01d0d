"""Navigation metrics (TL, NE, SR, OSR, SPL, collisions) and waypoint-set metrics."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from .errors import ValidationError
from .heatmap import Waypoint, waypoints_to_points
from .world import AgentPose, FloorPlan, geodesic_distance

SIM_SUCCESS_M = 3.0
STRICT_SUCCESS_M = 2.0

NAV_FIELDS = ("tl", "ne", "osr", "sr", "spl", "collisions")
WAYPOINT_FIELDS = ("delta", "pct_open", "d_c", "d_h", "s_way")


@dataclass
class StepRecord:
    step: int
    pose: dict
    action: str
    kind: str
    collided: bool
    options: list
    request_digest: str
    response: dict
    fallback: bool = False
    raw_responses: list = field(default_factory=list)


@dataclass
class EpisodeTrace:
    episode_id: str
    poses: List[AgentPose] = field(default_factory=list)
    actions: List[str] = field(default_factory=list)
    collisions: List[bool] = field(default_factory=list)
    requests: List[str] = field(default_factory=list)
    responses: List[str] = field(default_factory=list)
    aborted: bool = False
    abort_reason: str = ""
    stopped: bool = False
    steps: List[StepRecord] = field(default_factory=list)
    heatmaps: list = field(default_factory=list)

    def check(self):
        if len(self.poses) != len(self.actions) + 1:
            raise ValidationError("trace needs exactly one more pose than actions")
        if len(self.collisions) != len(self.actions):
            raise ValidationError("trace needs one collision flag per action")


@dataclass
class NavMetrics:
    tl: float
    ne: float
    osr: float
    sr: float
    spl: float
    collisions: float


@dataclass
class WaypointMetrics:
    delta: int
    pct_open: float
    d_c: float
    d_h: float
    s_way: float


def trajectory_length(trace: EpisodeTrace) -> float:
    p = np.array([(q.x, q.z) for q in trace.poses], dtype=np.float64).reshape(-1, 2)
    if len(p) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())


def navigation_error(trace: EpisodeTrace, goal, plan_world: FloorPlan) -> float:
    last = trace.poses[-1]
    return geodesic_distance(plan_world, (last.x, last.z), goal)


def success(trace: EpisodeTrace, goal, plan_world: FloorPlan, threshold: float = SIM_SUCCESS_M) -> bool:
    """Stopped on purpose, not aborted, and within ``threshold`` geodesic metres of the goal."""
    if trace.aborted or not trace.stopped:
        return False
    return navigation_error(trace, goal, plan_world) <= threshold


def oracle_success(trace: EpisodeTrace, goal, plan_world: FloorPlan, threshold: float = SIM_SUCCESS_M) -> bool:
    return any(geodesic_distance(plan_world, (p.x, p.z), goal) <= threshold for p in trace.poses)


def spl(succeeded: bool, shortest: float, tl: float) -> float:
    if not shortest > 0:
        raise ValidationError(f"shortest path length must be positive, got {shortest}")
    return shortest / max(shortest, tl) if succeeded else 0.0


def collision_rate(traces: Sequence[EpisodeTrace]) -> float:
    """Collided steps over all steps, pooled across traces."""
    if not traces:
        raise ValidationError("no traces")
    steps = sum(len(t.collisions) for t in traces)
    hits = sum(sum(bool(c) for c in t.collisions) for t in traces)
    return hits / steps if steps else 0.0


def _as_points(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or len(a) == 0:
        raise ValidationError("point sets must be non-empty (n, d) arrays")
    return a


def _pairwise(a, b):
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def chamfer(a, b) -> float:
    """Mean of the two directed mean nearest-neighbour distances."""
    a, b = _as_points(a), _as_points(b)
    d = _pairwise(a, b)
    return float((d.min(axis=1).mean() + d.min(axis=0).mean()) / 2.0)


def hausdorff(a, b) -> float:
    a, b = _as_points(a), _as_points(b)
    d = _pairwise(a, b)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def episode_metrics(trace: EpisodeTrace, start, goal, plan_world: FloorPlan, threshold: float = SIM_SUCCESS_M) -> NavMetrics:
    tl = trajectory_length(trace)
    ne = navigation_error(trace, goal, plan_world)
    ok = success(trace, goal, plan_world, threshold)
    shortest = geodesic_distance(plan_world, start, goal)
    coll = sum(bool(c) for c in trace.collisions) / len(trace.collisions) if trace.collisions else 0.0
    return NavMetrics(
        tl=tl,
        ne=ne,
        osr=float(oracle_success(trace, goal, plan_world, threshold)),
        sr=float(ok),
        spl=spl(ok, shortest, tl) if shortest > 0 else float(ok),
        collisions=coll,
    )


def aggregate_nav(per_episode: Sequence[NavMetrics], traces: Sequence[EpisodeTrace]) -> NavMetrics:
    if not per_episode:
        raise ValidationError("no episodes to aggregate")
    mean = {f: float(np.mean([getattr(m, f) for m in per_episode])) for f in NAV_FIELDS}
    mean["collisions"] = collision_rate(traces)
    return NavMetrics(**mean)


def waypoint_metrics(predicted: Sequence[Waypoint], gt, mask, p_star) -> WaypointMetrics:
    """Metrics for one pose. Distance fields are NaN when either set is empty.

    ``gt`` holds ``(theta_deg, dist_m)`` pairs or :class:`Waypoint` cells.
    """
    predicted = list(predicted)
    gt = list(gt)
    mask = np.asarray(mask)
    p_star = np.asarray(p_star, dtype=np.float64)
    delta = abs(len(predicted) - len(gt))
    if predicted:
        open_hits = [mask[w.angle_bin, w.dist_bin] for w in predicted]
        pct_open = 100.0 * float(np.mean(open_hits))
        s_way = float(np.mean([p_star[w.angle_bin, w.dist_bin] for w in predicted]))
    else:
        pct_open = s_way = math.nan
    if predicted and gt:
        a = waypoints_to_points(predicted)
        b = waypoints_to_points(gt)
        d_c, d_h = chamfer(a, b), hausdorff(a, b)
    else:
        d_c = d_h = math.nan
    return WaypointMetrics(delta, pct_open, d_c, d_h, s_way)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(round(v, 10))
    return str(v)


def write_nav_metrics(records: Sequence[dict], aggregate: NavMetrics, jsonl_path, csv_path) -> None:
    """One JSON object per episode, and a CSV with per-episode rows plus a ``mean`` row."""
    with open(jsonl_path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("episode_id",) + NAV_FIELDS)
        for rec in records:
            w.writerow([rec["episode_id"]] + [_fmt(rec[f]) for f in NAV_FIELDS])
        w.writerow(["mean"] + [_fmt(getattr(aggregate, f)) for f in NAV_FIELDS])


def write_waypoint_metrics(rows: Sequence[dict], csv_path) -> Dict[str, float]:
    """Per-pose rows plus a ``mean`` row (NaN-aware); returns the means."""
    means = {}
    for f in WAYPOINT_FIELDS:
        vals = np.array([r[f] for r in rows], dtype=np.float64)
        means[f] = float(np.nanmean(vals)) if np.any(np.isfinite(vals)) else math.nan
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("pose_id",) + WAYPOINT_FIELDS)
        for r in rows:
            w.writerow([r["pose_id"]] + [_fmt(r[f]) for f in WAYPOINT_FIELDS])
        w.writerow(["mean"] + [_fmt(means[f]) for f in WAYPOINT_FIELDS])
    return means
