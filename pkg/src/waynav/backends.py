"""Decision backends: the scripted greedy oracle and the HTTP decision client."""
from __future__ import annotations

import json
import logging
import math
import os
import re
from dataclasses import dataclass
from typing import List, Optional, Tuple

import httpx
import numpy as np

from .errors import BackendError, ParseError, PoseError
from .navigator import (
    FORMAT_REMINDER,
    ActionKind,
    DecisionRequest,
    DecisionResponse,
    _extract_action,
    parse_decision,
)
from .world import FloorPlan, geodesic_distance, segment_distances

log = logging.getLogger(__name__)

DEFAULT_TOKEN_ENV = "WAYNAV_API_TOKEN"
AVOID_RADIUS_M = 0.5
TRAP_RADIUS_M = 0.25

_DEAD_ENDS = re.compile(r"dead ends:\s*(.*)$", re.IGNORECASE | re.MULTILINE)
_POINT = re.compile(r"\((-?\d+(?:\.\d+)?),\s*(-?\d+(?:\.\d+)?)\)")


def _parse_dead_ends(plan_text: str) -> List[Tuple[float, float]]:
    m = _DEAD_ENDS.search(plan_text or "")
    if not m:
        return []
    return [(float(x), float(z)) for x, z in _POINT.findall(m.group(1))]


def _format_dead_ends(points) -> str:
    return "dead ends: " + "; ".join(f"({x:.2f}, {z:.2f})" for x, z in points)


class GreedyBackend:
    """Deterministic policy with privileged access to the goal and the plan.

    * Stop once the geodesic distance to the goal is within ``stop_threshold``.
    * Otherwise take the waypoint that gets geodesically closest to the goal,
      if it improves on the current distance. A move that already collided
      from the same spot is not retried, and neither is a path that runs
      through a recorded dead end or contact point.
    * When no waypoint improves, move back if allowed (and record the current
      position as a dead end in the plan), else take the best waypoint anyway,
      else turn sharp left.

    The plan text carries the dead-end list between steps, so the backend
    itself keeps no state.
    """

    def __init__(self, plan: FloorPlan, goal, stop_threshold: float = 3.0, backtrack: bool = True):
        self.plan = plan
        self.goal = (float(goal[0]), float(goal[1]))
        self.stop_threshold = stop_threshold
        self.backtrack = backtrack

    def _geo(self, point) -> float:
        try:
            return geodesic_distance(self.plan, point, self.goal)
        except PoseError:
            return math.inf

    @staticmethod
    def _avoided(here, target, blocked, traps) -> bool:
        # the same move from the same spot already failed
        for contact, t in blocked:
            if math.dist(here, contact) <= AVOID_RADIUS_M and math.dist(target, t) <= AVOID_RADIUS_M:
                return True
        # the straight path runs through a place that proved to be a dead end
        seg = np.array([[*here, *target]], dtype=np.float64)
        for p in traps:
            if math.dist(here, p) > AVOID_RADIUS_M and segment_distances(seg, p)[0, 0] <= TRAP_RADIUS_M:
                return True
        return False

    def decide(self, request: DecisionRequest) -> DecisionResponse:
        by_kind = {}
        for o in request.options:
            by_kind.setdefault(o.kind, o)
        pose = request.pose
        here = (pose.x, pose.z)
        d0 = self._geo(here)
        dead = _parse_dead_ends(request.plan)
        if d0 <= self.stop_threshold:
            return DecisionResponse(
                f"The goal is {d0:.2f} m away, within the stopping radius.",
                _format_dead_ends(dead), by_kind[ActionKind.STOP].id)

        blocked = [(e.pose_after.xz, e.target) for e in request.entries
                   if e.collided and e.kind is ActionKind.MOVE and e.target]
        traps = dead + [c for c, _ in blocked]
        scored = []
        for o in request.options:
            if o.kind is not ActionKind.MOVE:
                continue
            if self._avoided(here, o.target, blocked, traps):
                continue
            scored.append((self._geo(o.target), o.id, o))
        scored.sort(key=lambda t: (t[0], t[1]))
        best = scored[0] if scored and math.isfinite(scored[0][0]) else None

        if best and best[0] < d0 - 1e-6:
            return DecisionResponse(
                f"Waypoint {best[1]} brings me to {best[0]:.2f} m from the goal (now {d0:.2f} m).",
                _format_dead_ends(dead), best[1])

        back = by_kind.get(ActionKind.MOVE_BACK) if self.backtrack else None
        just_backed = bool(request.entries) and request.entries[-1].kind is ActionKind.MOVE_BACK
        if back is not None and (best is None or not just_backed):
            return DecisionResponse(
                "No waypoint gets closer to the goal; this looks like a dead end, so I move back.",
                _format_dead_ends(dead + [here]), back.id)
        if best is not None:
            return DecisionResponse(
                f"No waypoint improves on {d0:.2f} m; taking the least bad one, {best[1]}.",
                _format_dead_ends(dead), best[1])
        return DecisionResponse(
            "Nothing useful in view; turning to look elsewhere.",
            _format_dead_ends(dead), by_kind[ActionKind.TURN_SHARP_LEFT].id)


@dataclass
class ExternalConfig:
    endpoint: str
    mode: str = "native"  # "native" decision protocol or "chat" completions adapter
    model: str = ""
    temperature: float = 0.0
    token_env: str = DEFAULT_TOKEN_ENV
    timeout: float = 60.0
    retries: int = 2


class ExternalBackend:
    """One request/response round trip per decision over HTTP.

    A reply that cannot be parsed triggers a single re-prompt carrying a
    format reminder; a second bad reply falls back to Stop.
    """

    def __init__(self, config: ExternalConfig, client: Optional[httpx.Client] = None):
        if config.mode not in ("native", "chat"):
            raise ValueError(f"unknown external backend mode {config.mode!r}")
        self.config = config
        self.client = client or httpx.Client(timeout=config.timeout)

    def _headers(self):
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post(self, body: dict) -> str:
        last = None
        for attempt in range(self.config.retries + 1):
            try:
                r = self.client.post(self.config.endpoint, json=body, headers=self._headers(),
                                     timeout=self.config.timeout)
            except httpx.HTTPError as exc:
                last = exc
                log.warning("decision request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if r.status_code >= 500:
                last = BackendError(f"server error {r.status_code}")
                continue
            if r.status_code >= 400:
                raise BackendError(f"decision endpoint rejected the request: HTTP {r.status_code}")
            return r.text
        raise BackendError(f"decision endpoint unreachable after {self.config.retries + 1} attempts: {last}")

    def _native_body(self, request: DecisionRequest, reminder: Optional[str]) -> dict:
        body = request.to_wire()
        if reminder:
            body["reminder"] = reminder
        return body

    def _chat_body(self, request: DecisionRequest, reminder: Optional[str], first_raw: Optional[str]) -> dict:
        content = [{"type": "text", "text": request.prompt}]
        for img in request.images:
            content.append({
                "type": "image_url",
                "image_url": {"url": f"data:{img['mime']};base64,{img['base64']}"},
            })
        messages = [
            {"role": "system", "content": "You are a careful embodied navigation agent."},
            {"role": "user", "content": content},
        ]
        if reminder:
            messages.append({"role": "assistant", "content": first_raw or ""})
            messages.append({"role": "user", "content": reminder})
        body = {"messages": messages, "temperature": self.config.temperature}
        if self.config.model:
            body["model"] = self.config.model
        return body

    def _parse(self, raw: str, request: DecisionRequest) -> DecisionResponse:
        ids = request.offered_ids
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError as exc:
            if self.config.mode == "chat":
                raise ParseError(f"chat reply is not JSON: {exc}") from exc
            raise ParseError(f"decision reply is not JSON: {exc}") from exc
        if self.config.mode == "chat":
            try:
                text = payload["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise ParseError("chat reply has no assistant message") from exc
            if not isinstance(text, str):
                raise ParseError("assistant message is not text")
            return parse_decision(text, ids)
        if not isinstance(payload, dict) or not isinstance(payload.get("action"), str):
            raise ParseError("decision reply lacks a string 'action'")
        thought = payload.get("thought", "")
        plan = payload.get("plan", "")
        if not isinstance(thought, str) or not isinstance(plan, str):
            raise ParseError("'thought' and 'plan' must be strings")
        return DecisionResponse(thought, plan, _extract_action(payload["action"], ids))

    def _body(self, request, reminder=None, first_raw=None):
        if self.config.mode == "chat":
            return self._chat_body(request, reminder, first_raw)
        return self._native_body(request, reminder)

    def decide(self, request: DecisionRequest) -> DecisionResponse:
        raw1 = self._post(self._body(request))
        try:
            resp = self._parse(raw1, request)
            resp.raw = [raw1]
            return resp
        except ParseError as exc:
            log.info("unparseable decision (%s); re-prompting once", exc)
        reminder = FORMAT_REMINDER.format(ids=", ".join(request.offered_ids))
        raw2 = self._post(self._body(request, reminder, raw1))
        try:
            resp = self._parse(raw2, request)
            resp.raw = [raw1, raw2]
            return resp
        except ParseError as exc:
            log.info("second unparseable decision (%s); stopping", exc)
        stop_id = next(o.id for o in request.options if o.kind is ActionKind.STOP)
        return DecisionResponse("", request.plan, stop_id, fallback=True, raw=[raw1, raw2])

    def close(self):
        self.client.close()
