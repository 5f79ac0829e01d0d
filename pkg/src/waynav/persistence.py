"""Scene files, JSONL episode traces and heatmap streams."""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import List, Tuple

import jsonschema
import numpy as np

from .errors import LoadError, PoseError, ValidationError, WaynavError
from .heatmap import decode_phm_stream, encode_phm
from .metrics import EpisodeTrace, StepRecord
from .world import AgentPose, Bounds, Episode, FloorPlan, SceneObject, geodesic_distance

_NUM = {"type": "number"}
_POINT = {"type": "object", "required": ["x", "z"], "properties": {"x": _NUM, "z": _NUM}}

SCENE_SCHEMA = {
    "type": "object",
    "required": ["bounds", "walls", "episodes"],
    "properties": {
        "bounds": {
            "type": "object",
            "required": ["xmin", "zmin", "xmax", "zmax"],
            "properties": {k: _NUM for k in ("xmin", "zmin", "xmax", "zmax")},
        },
        "walls": {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 4, "maxItems": 4}},
        "objects": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["label", "x", "z", "r"],
                "properties": {"label": {"type": "string", "minLength": 1}, "x": _NUM, "z": _NUM,
                               "r": {"type": "number", "exclusiveMinimum": 0}},
            },
        },
        "openings": {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}},
        "episodes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "start", "goal"],
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "start": {**_POINT, "properties": {"x": _NUM, "z": _NUM, "heading": _NUM}},
                    "goal": _POINT,
                    "instruction": {"type": "string"},
                },
            },
        },
    },
}


def _field_path(err: jsonschema.ValidationError) -> str:
    parts = []
    for p in err.absolute_path:
        parts.append(f"[{p}]" if isinstance(p, int) else (f".{p}" if parts else str(p)))
    return "".join(parts) or "<root>"


def parse_scene(doc: dict, source: str = "<scene>") -> Tuple[FloorPlan, List[Episode]]:
    """Validate a decoded scene document and build the plan and its episodes."""
    try:
        jsonschema.validate(doc, SCENE_SCHEMA)
    except jsonschema.ValidationError as err:
        raise LoadError(f"{source}: field {_field_path(err)}: {err.message}") from None
    b = doc["bounds"]
    try:
        bounds = Bounds(b["xmin"], b["zmin"], b["xmax"], b["zmax"])
        objects = [SceneObject(o["label"], o["x"], o["z"], o["r"]) for o in doc.get("objects", [])]
        plan = FloorPlan(np.array(doc["walls"], dtype=np.float64).reshape(-1, 4), objects, bounds,
                         [tuple(p) for p in doc.get("openings", [])])
    except ValidationError as err:
        raise LoadError(f"{source}: {err}") from None

    episodes = []
    seen = set()
    for i, e in enumerate(doc["episodes"]):
        if e["id"] in seen:
            raise LoadError(f"{source}: field episodes[{i}].id: duplicate episode id {e['id']!r}")
        seen.add(e["id"])
        s = e["start"]
        ep = Episode(e["id"], AgentPose(s["x"], s["z"], s.get("heading", 0.0)),
                     (float(e["goal"]["x"]), float(e["goal"]["z"])), e.get("instruction", ""))
        try:
            d = geodesic_distance(plan, (ep.start.x, ep.start.z), ep.goal)
        except PoseError as err:
            raise LoadError(f"{source}: episode {ep.id!r}: {err}") from None
        if not math.isfinite(d):
            raise LoadError(f"{source}: episode {ep.id!r}: goal is not reachable from the start")
        episodes.append(ep)
    return plan, episodes


def load_scene(path) -> Tuple[FloorPlan, List[Episode]]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise LoadError(f"scene file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise LoadError(f"{path}: not valid JSON: {err}") from None
    return parse_scene(doc, str(path))


def scene_to_dict(plan: FloorPlan, episodes) -> dict:
    b = plan.bounds
    return {
        "bounds": {"xmin": b.xmin, "zmin": b.zmin, "xmax": b.xmax, "zmax": b.zmax},
        "walls": [[float(v) for v in w] for w in plan.walls],
        "objects": [{"label": o.label, "x": o.x, "z": o.z, "r": o.radius} for o in plan.objects],
        "openings": [[x, z] for x, z in plan.openings],
        "episodes": [
            {"id": e.id, "start": {"x": e.start.x, "z": e.start.z, "heading": e.start.heading_deg},
             "goal": {"x": e.goal[0], "z": e.goal[1]}, "instruction": e.instruction}
            for e in episodes
        ],
    }


# --- traces -----------------------------------------------------------------
# A trace file holds a header line, one line per step, and an end line. Each
# line carries a "record" key so readers can stream it.

def _pose_dict(p: AgentPose) -> dict:
    return {"x": p.x, "z": p.z, "heading": p.heading_deg}


def trace_lines(trace: EpisodeTrace) -> List[str]:
    trace.check()
    out = [json.dumps({"record": "header", "episode_id": trace.episode_id, "start": _pose_dict(trace.poses[0])},
                      sort_keys=True)]
    for i, s in enumerate(trace.steps):
        rec = {
            "record": "step",
            "step": s.step,
            "pose": s.pose,
            "action": s.action,
            "kind": s.kind,
            "collided": s.collided,
            "options": s.options,
            "request_digest": s.request_digest,
            "response": s.response,
            "fallback": s.fallback,
            "raw_responses": s.raw_responses,
            "prompt": trace.requests[i],
        }
        out.append(json.dumps(rec, sort_keys=True))
    end = {"record": "end", "stopped": trace.stopped, "aborted": trace.aborted, "abort_reason": trace.abort_reason}
    if len(trace.requests) > len(trace.steps):
        end["pending_prompt"] = trace.requests[-1]
    out.append(json.dumps(end, sort_keys=True))
    return out


def write_trace(trace: EpisodeTrace, path) -> None:
    Path(path).write_text("\n".join(trace_lines(trace)) + "\n")


def parse_trace(lines, source: str = "<trace>") -> EpisodeTrace:
    trace = None
    ended = False
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            kind = rec["record"]
            if ended:
                raise ValueError("content after the end record")
            if kind == "header":
                if trace is not None:
                    raise ValueError("second header")
                s = rec["start"]
                trace = EpisodeTrace(rec["episode_id"], poses=[AgentPose(s["x"], s["z"], s["heading"])])
            elif kind == "step":
                if trace is None:
                    raise ValueError("step before header")
                if trace.steps and rec["step"] <= trace.steps[-1].step:
                    raise ValueError("step indices must increase")
                p = rec["pose"]
                trace.poses.append(AgentPose(p["x"], p["z"], p["heading"]))
                trace.actions.append(rec["kind"])
                trace.collisions.append(bool(rec["collided"]))
                trace.requests.append(rec["prompt"])
                raws = rec["raw_responses"]
                trace.responses.append(raws[-1] if raws else "")
                trace.steps.append(StepRecord(
                    rec["step"], p, rec["action"], rec["kind"], bool(rec["collided"]), rec["options"],
                    rec["request_digest"], rec["response"], bool(rec["fallback"]), list(raws)))
            elif kind == "end":
                if trace is None:
                    raise ValueError("end before header")
                trace.stopped = bool(rec["stopped"])
                trace.aborted = bool(rec["aborted"])
                trace.abort_reason = rec["abort_reason"]
                if "pending_prompt" in rec:
                    trace.requests.append(rec["pending_prompt"])
                ended = True
            else:
                raise ValueError(f"unknown record type {kind!r}")
        except (ValueError, KeyError, TypeError, WaynavError) as err:
            raise LoadError(f"{source}: line {n}: malformed trace record ({err})") from None
    if trace is None or not ended:
        raise LoadError(f"{source}: trace is incomplete (missing {'header' if trace is None else 'end'} record)")
    return trace


def read_trace(path) -> EpisodeTrace:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise LoadError(f"trace file not found: {path}") from None
    return parse_trace(text.splitlines(), str(path))


def write_heatmaps(heatmaps, path) -> None:
    """Concatenated PHM1 records, one per step."""
    with open(path, "wb") as fh:
        for hm in heatmaps:
            fh.write(encode_phm(hm))


def read_heatmaps(path) -> List[np.ndarray]:
    return decode_phm_stream(Path(path).read_bytes())
