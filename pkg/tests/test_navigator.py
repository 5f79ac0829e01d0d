import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import FIXTURES, box_walls
from waynav.backends import GreedyBackend
from waynav.errors import ParseError, StateError
from waynav.heatmap import Waypoint, metric_to_cell
from waynav.navigator import (
    NONE_PLAN,
    ActionKind,
    HistoryEntry,
    NavState,
    apply_action,
    assemble_prompt,
    build_action_space,
    parse_decision,
    replay,
    run_episode,
)
from waynav.persistence import load_scene
from waynav.sources import OraclePredictor
from waynav.world import AgentPose, Bounds, Episode, FloorPlan, SceneObject

GOLDEN = FIXTURES / "golden_prompt.txt"


def open_plan(objects=()):
    return FloorPlan(np.array(box_walls(-5, -5, 5, 5)), list(objects), Bounds(-5, -5, 5, 5))


def golden_state():
    pose = AgentPose(1.0, 2.0, 90.0)
    hist = [
        HistoryEntry(0, "Turn slight left (about 30 degrees)", (), AgentPose(1.0, 2.0, 60.0), ActionKind.TURN_SLIGHT_LEFT),
        HistoryEntry(1, "Move to the waypoint straight ahead, 1.50 m away (you will see: table)", ("table",),
                     AgentPose(2.3, 2.75, 60.0), ActionKind.MOVE, (2.3, 2.75)),
        HistoryEntry(2, "Turn slight right (about 30 degrees)", ("lamp", "sofa"), pose, ActionKind.TURN_SLIGHT_RIGHT),
    ]
    return NavState(pose, hist, "Cross the hall, then enter the kitchen.", [AgentPose(1.0, 2.0, 60.0)], 3)


def golden_prompt():
    plan = open_plan([SceneObject("table", 3.0, 2.0, 0.3), SceneObject("plant", 1.0, 4.0, 0.2)])
    state = golden_state()
    options = build_action_space([Waypoint(0, 5, 0.9), Waypoint(90, 3, 0.6)], state.pose, plan, state)
    return assemble_prompt("Walk past the table and stop by the plant.", state, options)


# --- action space


def test_action_space_two_waypoints_empty_stack():
    opts = build_action_space([Waypoint(0, 3), Waypoint(40, 5)], AgentPose(0, 0), open_plan(), NavState(AgentPose(0, 0)))
    assert [o.id for o in opts] == list("ABCDEFG")
    assert [o.kind for o in opts] == [ActionKind.MOVE, ActionKind.MOVE, ActionKind.TURN_SLIGHT_LEFT,
                                      ActionKind.TURN_SHARP_LEFT, ActionKind.TURN_SLIGHT_RIGHT,
                                      ActionKind.TURN_SHARP_RIGHT, ActionKind.STOP]


def test_action_space_no_waypoints_with_stack():
    state = NavState(AgentPose(0, 0), backtrack_stack=[AgentPose(0, -1)])
    opts = build_action_space([], AgentPose(0, 0), open_plan(), state)
    assert [o.kind for o in opts][-2:] == [ActionKind.MOVE_BACK, ActionKind.STOP]
    assert len(opts) == 6 and not any(o.kind is ActionKind.MOVE for o in opts)


def test_action_space_caps_waypoints_at_five():
    wps = [Waypoint(10 * i, 4) for i in range(8)]
    opts = build_action_space(wps, AgentPose(0, 0), open_plan(), NavState(AgentPose(0, 0)))
    assert sum(o.kind is ActionKind.MOVE for o in opts) == 5
    assert len({o.id for o in opts}) == len(opts)


def test_waypoint_toward_table_is_tagged():
    plan = open_plan([SceneObject("table", 2.0, 0.0, 0.3), SceneObject("bed", -2.0, 0.0, 0.3)])
    k, j = metric_to_cell(90.0, 1.5)
    opts = build_action_space([Waypoint(k, j)], AgentPose(0, 0, 0), plan, NavState(AgentPose(0, 0)))
    assert "table" in opts[0].description and "bed" not in opts[0].description
    assert opts[0].target == pytest.approx((1.5 * math.sin(math.radians(91.5)), 1.5 * math.cos(math.radians(91.5))))


# --- prompt


def test_prompt_first_step_uses_none_sentinel():
    state = NavState(AgentPose(0, 0))
    req = assemble_prompt("go", state, build_action_space([], state.pose, open_plan(), state))
    assert req.plan == NONE_PLAN and f"Previous Planning:\n{NONE_PLAN}" in req.prompt


def test_prompt_sections_in_order_and_history_lines():
    req = golden_prompt()
    heads = ["Instruction:", "Previous Planning:", "History:", "Current Action Options:", "Thought:"]
    pos = [req.prompt.index(h) for h in heads]
    assert pos == sorted(pos)
    assert len(req.history) == 3
    assert [line.split(":")[0] for line in req.history] == ["Step 0", "Step 1", "Step 2"]
    assert "lamp, sofa" in req.history[2]


def test_prompt_matches_golden_file():
    assert golden_prompt().prompt == GOLDEN.read_text()
    assert golden_prompt().prompt == golden_prompt().prompt


def test_prompt_empty_options_rejected():
    with pytest.raises(StateError):
        assemble_prompt("x", NavState(AgentPose(0, 0)), [])


def test_history_summarises_old_entries():
    hist = [HistoryEntry(i, "Turn slight left (about 30 degrees)", (), AgentPose(0, 0)) for i in range(15)]
    state = NavState(AgentPose(0, 0), hist)
    req = assemble_prompt("x", state, build_action_space([], state.pose, open_plan(), state))
    assert req.history[0] == "(3 earlier steps not shown)"
    assert len(req.history) == 13 and req.history[1].startswith("Step 3:")


# --- parsing


def test_parse_basic_example():
    r = parse_decision("Thought: go door. New Plan: cross hall. Action: B", ["A", "B", "C"])
    assert (r.thought, r.new_plan, r.action_id) == ("go door.", "cross hall.", "B")


def test_parse_errors():
    with pytest.raises(ParseError):
        parse_decision("Action: Z", ["A", "B", "C"])
    with pytest.raises(ParseError):
        parse_decision("", ["A"])
    with pytest.raises(ParseError):
        parse_decision("Thought: hmm, not sure", ["A", "B"])


def _fuzz_corpus():
    """50 formatting variants that all select option B."""
    label = ["Action: B", "**Action: B**", "action: b", "ACTION: B", "Action - B", "Action: (B)",
             "Action: B.", "Action: Option B", "**Action:** B", "Action:B", "`Action: B`", "Action: [B]",
             "Action = B", "Action: B) turn left"]
    lead = ["", "Sure, here you go.\n", "Thought: the door is left. New Plan: go.\n",
            "Thought: A seems blocked\nNew Plan: try the other way\n"]
    out = [f"{p}{a}" for p, a in itertools.product(lead, label)][:46]
    out += ["### Thought\nlook\n### Action: B", "> Action: B", "Thought: x\nPlan: y\nAction: B\n\nThanks!",
            "Thought: first Action: A was wrong. Action: B"]
    return out


@pytest.mark.parametrize("raw", _fuzz_corpus())
def test_parse_fuzz_corpus(raw):
    assert parse_decision(raw, list("ABCDEFG")).action_id == "B"


def test_fuzz_corpus_size():
    assert len(_fuzz_corpus()) == 50


@settings(max_examples=60, deadline=None)
@given(st.text(max_size=80), st.lists(st.sampled_from("ABCDEFG"), min_size=1, max_size=7, unique=True))
def test_parsed_action_always_offered(text, ids):
    try:
        r = parse_decision(text, ids)
    except ParseError:
        return
    assert r.action_id in ids


# --- applying actions


def _move_option(state, plan, theta, dist):
    k, j = metric_to_cell(theta, dist)
    return next(o for o in build_action_space([Waypoint(k, j)], state.pose, plan, state) if o.kind is ActionKind.MOVE)


def _kind(state, plan, kind):
    return next(o for o in build_action_space([], state.pose, plan, state) if o.kind is kind)


def test_turn_sharp_left_from_90():
    state = NavState(AgentPose(0, 0, 90.0))
    apply_action(state, _kind(state, open_plan(), ActionKind.TURN_SHARP_LEFT), open_plan())
    assert state.pose.heading_deg % 360 == pytest.approx(0.0)
    assert state.backtrack_stack == []


def test_move_then_move_back_restores_origin():
    plan = open_plan()
    state = NavState(AgentPose(0.2, -0.4, 10.0))
    apply_action(state, _move_option(state, plan, 30, 2.0), plan)
    assert math.dist(state.pose.xz, (0.2, -0.4)) > 1.5
    back = _kind(state, plan, ActionKind.MOVE_BACK)
    apply_action(state, back, plan)
    assert math.dist(state.pose.xz, (0.2, -0.4)) <= 0.01
    assert not state.history[-1].collided
    # heading opposes the arrival bearing of the forward move
    assert (state.pose.heading_deg - (10 + 31.5 + 180)) % 360 == pytest.approx(0.0, abs=1e-6)


def test_move_back_on_empty_stack_is_state_error():
    from waynav.navigator import ActionOption
    with pytest.raises(StateError):
        apply_action(NavState(AgentPose(0, 0)), ActionOption("E", ActionKind.MOVE_BACK, "back"), open_plan())


def test_stop_sets_done_and_keeps_pose():
    state = NavState(AgentPose(1, 1, 45))
    apply_action(state, _kind(state, open_plan(), ActionKind.STOP), open_plan())
    assert state.done and state.pose == AgentPose(1, 1, 45)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 359), st.floats(0.3, 2.0)), min_size=1, max_size=6))
def test_backtrack_stack_is_lifo(moves):
    plan = open_plan()
    state = NavState(AgentPose(0, 0))
    visited = [state.pose]
    for theta, dist in moves:
        apply_action(state, _move_option(state, plan, theta, dist), plan)
        visited.append(state.pose)
    for n in range(1, len(moves) + 1):
        apply_action(state, _kind(state, plan, ActionKind.MOVE_BACK), plan)
        assert math.dist(state.pose.xz, visited[-1 - n].xz) <= 0.01
    assert all(o.kind is not ActionKind.MOVE_BACK for o in build_action_space([], state.pose, plan, state))


# --- episodes


def test_goal_one_metre_ahead_stops_with_success():
    plan = open_plan()
    ep = Episode("near", AgentPose(0, 0, 0), (0.0, 1.0))
    trace = run_episode(plan, ep, GreedyBackend(plan, ep.goal), OraclePredictor())
    assert trace.stopped and len(trace.steps) >= 1 and trace.actions[-1] == "stop"


def test_max_steps_zero_truncates():
    plan = open_plan()
    ep = Episode("none", AgentPose(0, 0, 0), (4.0, 4.0))
    trace = run_episode(plan, ep, GreedyBackend(plan, ep.goal), OraclePredictor(), max_steps=0)
    assert not trace.stopped and trace.steps == [] and len(trace.poses) == 1


def test_fixture_episodes_replay_exactly():
    plan, episodes = load_scene(FIXTURES / "fixture_scene.json")
    for ep in episodes:
        trace = run_episode(plan, ep, GreedyBackend(plan, ep.goal), OraclePredictor(), max_steps=20)
        assert len(trace.poses) <= 21
        assert trace.stopped
        assert replay(plan, trace) == trace.poses
        for rec in trace.steps:
            assert rec.action in [o["id"] for o in rec.options]
        # MoveBack never offered at step 0
        assert all(o["kind"] != "move_back" for o in trace.steps[0].options)
