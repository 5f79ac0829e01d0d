"""History-aware single-prompt navigator with multi-scale turns and backtracking."""
from __future__ import annotations

import enum
import hashlib
import math
import re
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import BackendError, ParseError, StateError
from .heatmap import K_MAX, Waypoint, polar_to_metric
from .metrics import EpisodeTrace, StepRecord
from .world import (
    AgentPose,
    Episode,
    FloorPlan,
    bearing_deg,
    heading_vector,
    step_to,
    visible_objects,
)

HISTORY_VERBATIM = 12
DEFAULT_MAX_STEPS = 20
NONE_PLAN = "None (this is the first step)."


class ActionKind(str, enum.Enum):
    MOVE = "move_to_waypoint"
    TURN_SLIGHT_LEFT = "turn_slight_left"
    TURN_SHARP_LEFT = "turn_sharp_left"
    TURN_SLIGHT_RIGHT = "turn_slight_right"
    TURN_SHARP_RIGHT = "turn_sharp_right"
    MOVE_BACK = "move_back"
    STOP = "stop"


TURN_DEGREES = {
    ActionKind.TURN_SLIGHT_LEFT: -30.0,
    ActionKind.TURN_SHARP_LEFT: -90.0,
    ActionKind.TURN_SLIGHT_RIGHT: 30.0,
    ActionKind.TURN_SHARP_RIGHT: 90.0,
}

_TURN_TEXT = {
    ActionKind.TURN_SLIGHT_LEFT: "Turn slight left (about 30 degrees)",
    ActionKind.TURN_SHARP_LEFT: "Turn sharp left (about 90 degrees)",
    ActionKind.TURN_SLIGHT_RIGHT: "Turn slight right (about 30 degrees)",
    ActionKind.TURN_SHARP_RIGHT: "Turn sharp right (about 90 degrees)",
}


@dataclass(frozen=True)
class ActionOption:
    id: str
    kind: ActionKind
    description: str
    waypoint: Optional[Waypoint] = None
    target: Optional[Tuple[float, float]] = None
    tags: Tuple[str, ...] = ()
    view_index: Optional[int] = None


@dataclass(frozen=True)
class HistoryEntry:
    step: int
    action_taken: str
    scene_tags: Tuple[str, ...]
    pose_after: AgentPose
    kind: ActionKind = ActionKind.MOVE
    target: Optional[Tuple[float, float]] = None
    collided: bool = False


@dataclass
class NavState:
    pose: AgentPose
    history: List[HistoryEntry] = field(default_factory=list)
    plan: str = ""
    backtrack_stack: List[AgentPose] = field(default_factory=list)
    step_count: int = 0
    done: bool = False


@dataclass
class DecisionRequest:
    instruction: str
    plan: str
    history: List[str]
    options: List[ActionOption]
    prompt: str
    pose: Optional[AgentPose] = None
    entries: Tuple[HistoryEntry, ...] = ()
    images: List[dict] = field(default_factory=list)

    @property
    def offered_ids(self) -> List[str]:
        return [o.id for o in self.options]

    def digest(self) -> str:
        return hashlib.sha256(self.prompt.encode("utf-8")).hexdigest()

    def to_wire(self) -> dict:
        body = {
            "instruction": self.instruction,
            "plan": self.plan,
            "history": list(self.history),
            "options": [{"id": o.id, "text": o.description} for o in self.options],
        }
        if self.images:
            body["images"] = list(self.images)
        return body


@dataclass
class DecisionResponse:
    thought: str
    new_plan: str
    action_id: str
    fallback: bool = False
    raw: List[str] = field(default_factory=list)


def option_letter(i: int) -> str:
    return chr(ord("A") + i)


def relative_direction_text(theta_deg: float) -> str:
    signed = (theta_deg + 180.0) % 360.0 - 180.0
    if abs(signed) < 10:
        return "straight ahead"
    if abs(signed) > 170:
        return "behind you"
    side = "right" if signed > 0 else "left"
    return f"{abs(signed):.0f} degrees to your {side}"


def build_action_space(waypoints: Sequence[Waypoint], pose: AgentPose, plan_world: FloorPlan, state: NavState) -> List[ActionOption]:
    """Waypoint moves (max 5), four turns, MoveBack when the stack is non-empty, then Stop."""
    options: List[ActionOption] = []
    for w in list(waypoints)[:K_MAX]:
        theta, dist = polar_to_metric(w)
        view = int(round(theta / 30.0)) % 12
        tags = tuple(v.label for v in visible_objects(plan_world, pose, view))
        world_bearing = pose.heading_deg + theta
        target = tuple(float(c) for c in pose.xz + dist * heading_vector(world_bearing))
        seen = ", ".join(tags) if tags else "nothing notable"
        desc = f"Move to the waypoint {relative_direction_text(theta)}, {dist:.2f} m away (you will see: {seen})"
        options.append(ActionOption(option_letter(len(options)), ActionKind.MOVE, desc, w, target, tags, view))
    for kind in (ActionKind.TURN_SLIGHT_LEFT, ActionKind.TURN_SHARP_LEFT, ActionKind.TURN_SLIGHT_RIGHT, ActionKind.TURN_SHARP_RIGHT):
        options.append(ActionOption(option_letter(len(options)), kind, _TURN_TEXT[kind]))
    if state.backtrack_stack:
        options.append(ActionOption(option_letter(len(options)), ActionKind.MOVE_BACK,
                                    "Go back to the previous position, reversing direction"))
    options.append(ActionOption(option_letter(len(options)), ActionKind.STOP, "Stop: you have reached the goal"))
    return options


TASK_DESCRIPTION = (
    "You are a robot navigating an indoor environment by following a human instruction. "
    "At every step you see the candidate actions below. Check the previous plan, review the "
    "history of what you have done and seen, reason about where to go next, update your plan, "
    "and choose exactly one action. If a path turns out to be wrong you may move back to the "
    "last position."
)

FORMAT_DIRECTIVE = (
    "Reply in exactly this format:\n"
    "Thought: <your reasoning>\n"
    "New Plan: <your updated multi-step plan>\n"
    "Action: <one option letter>"
)

FORMAT_REMINDER = (
    "Your previous reply could not be parsed. Answer again using exactly the three lines "
    "'Thought: ...', 'New Plan: ...' and 'Action: <letter>', where the letter is one of: {ids}."
)


def render_history(entries: Sequence[HistoryEntry], keep: int = HISTORY_VERBATIM) -> List[str]:
    lines = []
    older = len(entries) - keep
    if older > 0:
        lines.append(f"({older} earlier step{'s' if older != 1 else ''} not shown)")
    for e in entries[max(older, 0):]:
        seen = ", ".join(e.scene_tags) if e.scene_tags else "nothing notable"
        p = e.pose_after
        bump = " (blocked by an obstacle)" if e.collided else ""
        lines.append(
            f"Step {e.step}: {e.action_taken}{bump}; saw: {seen}; "
            f"now at ({p.x:.2f}, {p.z:.2f}) facing {p.heading_deg:.0f} degrees"
        )
    return lines


def assemble_prompt(instruction: str, state: NavState, options: Sequence[ActionOption]) -> DecisionRequest:
    if not options:
        raise StateError("cannot prompt with an empty action space")
    plan = state.plan if state.plan else NONE_PLAN
    history = render_history(state.history)
    parts = [
        TASK_DESCRIPTION,
        f"Instruction: {instruction}",
        f"Previous Planning:\n{plan}",
        "History:\n" + ("\n".join(history) if history else "None."),
        "Current Action Options:\n" + "\n".join(f"{o.id}. {o.description}" for o in options),
        FORMAT_DIRECTIVE,
    ]
    return DecisionRequest(
        instruction=instruction,
        plan=plan,
        history=history,
        options=list(options),
        prompt="\n\n".join(parts) + "\n",
        pose=state.pose,
        entries=tuple(state.history),
    )


_LABEL = re.compile(r"(new\s+plan|thought|plan|action)\s*[:：=\-]", re.IGNORECASE)
_MARKUP = re.compile(r"[*_`#>]+")
_LEAD_LETTER = re.compile(
    r"^\s*(?:(?:option|choice)\s*)?[\(\[\{<'\"]?\s*([A-Za-z])\s*(?:[\)\]\}>'\".:,;!]|\s|$)", re.IGNORECASE
)
_OPTION_WORD = re.compile(r"\b(?:option|choice)\s*[\(\[]?([A-Za-z])\b", re.IGNORECASE)


def _extract_action(value: str, offered: Sequence[str]) -> str:
    offered_up = {o.upper() for o in offered}
    m = _LEAD_LETTER.match(value)
    if m:
        letter = m.group(1).upper()
        if letter in offered_up:
            return letter
        raise ParseError(f"action {letter!r} is not one of the offered options {sorted(offered_up)}")
    m = _OPTION_WORD.search(value)
    if m and m.group(1).upper() in offered_up:
        return m.group(1).upper()
    loose = {c for c in re.findall(r"\b([A-Z])\b", value) if c in offered_up}
    if len(loose) == 1:
        return loose.pop()
    raise ParseError(f"no offered action letter found in {value.strip()[:60]!r}")


def parse_decision(raw: str, offered_ids: Sequence[str]) -> DecisionResponse:
    """Pull Thought / New Plan / Action out of free text."""
    if raw is None or not raw.strip():
        raise ParseError("empty response")
    text = _MARKUP.sub("", raw)
    marks = [(m.start(), m.end(), re.sub(r"\s+", " ", m.group(1).lower())) for m in _LABEL.finditer(text)]
    fields = {}
    for i, (_, end, name) in enumerate(marks):
        stop = marks[i + 1][0] if i + 1 < len(marks) else len(text)
        value = text[end:stop].strip()
        key = "plan" if name in ("plan", "new plan") else name
        if key == "action":
            fields["action"] = value  # the last Action label wins
        else:
            fields.setdefault(key, value)
    if "action" not in fields:
        raise ParseError("response has no Action field")
    action = _extract_action(fields["action"], offered_ids)
    return DecisionResponse(fields.get("thought", ""), fields.get("plan", ""), action, raw=[raw])


def apply_action(state: NavState, option: ActionOption, plan_world: FloorPlan) -> NavState:
    """Execute one option in place and return the state."""
    pose = state.pose
    step = state.step_count
    collided = False
    target = None
    tags: Tuple[str, ...] = ()
    if option.kind is ActionKind.MOVE:
        target = option.target
        outcome = step_to(pose, target, plan_world)
        state.backtrack_stack.append(pose)
        new_pose, collided, tags = outcome.new_pose, outcome.collided, option.tags
    elif option.kind in TURN_DEGREES:
        new_pose = AgentPose(pose.x, pose.z, pose.heading_deg + TURN_DEGREES[option.kind])
    elif option.kind is ActionKind.MOVE_BACK:
        if not state.backtrack_stack:
            raise StateError("MoveBack with an empty backtrack stack")
        prev = state.backtrack_stack.pop()
        if math.dist((prev.x, prev.z), (pose.x, pose.z)) > 1e-9:
            arrival = bearing_deg((prev.x, prev.z), (pose.x, pose.z))
        else:
            arrival = pose.heading_deg
        target = (prev.x, prev.z)
        outcome = step_to(pose, target, plan_world)
        collided = outcome.collided
        if collided:
            new_pose = outcome.new_pose
        else:
            new_pose = AgentPose(prev.x, prev.z, arrival + 180.0)
    elif option.kind is ActionKind.STOP:
        new_pose = pose
        state.done = True
    else:  # pragma: no cover
        raise StateError(f"unknown action kind {option.kind}")
    state.pose = new_pose
    state.step_count = step + 1
    state.history.append(HistoryEntry(step, option.description, tags, new_pose, option.kind, target, collided))
    return state


def decide(backend, request: DecisionRequest) -> DecisionResponse:
    response = backend.decide(request)
    if response.action_id not in request.offered_ids:
        raise BackendError(f"backend chose {response.action_id!r}, offered {request.offered_ids}")
    return response


def run_episode(
    plan_world: FloorPlan,
    episode: Episode,
    backend,
    predictor_source,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> EpisodeTrace:
    """Render -> waypoints -> options -> decide -> apply, until Stop or ``max_steps``."""
    state = NavState(episode.start)
    trace = EpisodeTrace(episode.id, poses=[episode.start])
    for _ in range(max_steps):
        heatmap, waypoints = predictor_source.predict(plan_world, state.pose, state.step_count)
        options = build_action_space(waypoints, state.pose, plan_world, state)
        request = assemble_prompt(episode.instruction, state, options)
        try:
            response = decide(backend, request)
        except BackendError as exc:
            trace.aborted = True
            trace.abort_reason = str(exc)
            trace.requests.append(request.prompt)
            break
        option = next(o for o in options if o.id == response.action_id)
        apply_action(state, option, plan_world)
        state.plan = response.new_plan
        last = state.history[-1]
        trace.poses.append(state.pose)
        trace.actions.append(option.kind.value)
        trace.collisions.append(last.collided)
        trace.requests.append(request.prompt)
        trace.responses.append(response.raw[-1] if response.raw else "")
        trace.heatmaps.append(np.asarray(heatmap, dtype=np.float64))
        trace.steps.append(StepRecord(
            step=last.step,
            pose={"x": state.pose.x, "z": state.pose.z, "heading": state.pose.heading_deg},
            action=option.id,
            kind=option.kind.value,
            collided=last.collided,
            options=[_option_record(o) for o in options],
            request_digest=request.digest(),
            response={"thought": response.thought, "plan": response.new_plan, "action": response.action_id},
            fallback=response.fallback,
            raw_responses=list(response.raw),
        ))
        if state.done:
            trace.stopped = True
            break
    return trace


def _option_record(o: ActionOption) -> dict:
    rec = {"id": o.id, "kind": o.kind.value, "text": o.description}
    if o.waypoint is not None:
        rec["cell"] = [o.waypoint.angle_bin, o.waypoint.dist_bin, o.waypoint.score]
    if o.target is not None:
        rec["target"] = [o.target[0], o.target[1]]
    if o.tags:
        rec["tags"] = list(o.tags)
    return rec


def replay(plan_world: FloorPlan, trace: EpisodeTrace) -> List[AgentPose]:
    """Re-apply the recorded choices from the start pose and return every pose."""
    state = NavState(trace.poses[0])
    poses = [state.pose]
    for rec in trace.steps:
        chosen = next(o for o in rec.options if o["id"] == rec.action)
        kind = ActionKind(chosen["kind"])
        target = tuple(chosen["target"]) if "target" in chosen else None
        option = ActionOption(chosen["id"], kind, chosen["text"], target=target, tags=tuple(chosen.get("tags", ())))
        apply_action(state, option, plan_world)
        poses.append(state.pose)
    return poses
