"""Waypoint sources for the navigation loop."""
from __future__ import annotations

import math
from typing import List, Tuple

import numpy as np

from .geometry import MAX_RANGE_M, DepthCamera
from .heatmap import K_MAX, NMS_RADIUS_BINS, nms, target_heatmap
from .predictor import ToyPredictorParams, predict_heatmap, synth_features
from .scenes import relative_waypoints
from .world import AgentPose, FloorPlan, bearing_deg, raycast_many, render_depth_panorama


def visible_openings(plan: FloorPlan, pose: AgentPose, max_dist: float = 3.0) -> List[Tuple[float, float]]:
    """Marked openings within ``max_dist`` that have an unobstructed line of sight."""
    out = []
    for x, z in plan.openings:
        d = math.hypot(x - pose.x, z - pose.z)
        if not (0.25 * 0.5 < d <= max_dist):
            continue
        b = bearing_deg((pose.x, pose.z), (x, z))
        if raycast_many(plan, (pose.x, pose.z), [b], d + 1.0)[0] + 1e-6 < d:
            continue
        out.append((x, z))
    return out


class OraclePredictor:
    """Heatmap built from the ground-truth openings in view."""

    name = "oracle"

    def __init__(self, min_score: float = 0.5):
        self.min_score = min_score

    def ground_truth(self, plan, pose):
        return relative_waypoints(pose, visible_openings(plan, pose))

    def predict(self, plan: FloorPlan, pose: AgentPose, step: int = 0):
        heatmap = target_heatmap(self.ground_truth(plan, pose))
        return heatmap, nms(heatmap, K_MAX, NMS_RADIUS_BINS, self.min_score)


class ToyPredictorSource:
    """Heatmap from a trained :class:`ToyPredictorParams` on the rendered panorama."""

    name = "toy"

    def __init__(self, params: ToyPredictorParams, camera: DepthCamera = DepthCamera(), seed: int = 0, min_score: float = 0.0):
        self.params = params
        self.camera = camera
        self.seed = seed
        self.min_score = min_score

    def predict(self, plan: FloorPlan, pose: AgentPose, step: int = 0):
        pano = render_depth_panorama(plan, pose, self.camera, MAX_RANGE_M)
        rng = np.random.default_rng([self.seed, step])
        heatmap = predict_heatmap(synth_features(pano, rng, self.params.dim), self.params)
        return heatmap, nms(heatmap, K_MAX, NMS_RADIUS_BINS, self.min_score)
