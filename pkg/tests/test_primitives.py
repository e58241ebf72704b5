import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from fineassembly.model import ConfigError, make_transform
from fineassembly.primitives import (
    ControlMode,
    InteractionLevel,
    InvocationError,
    PrimitiveFailure,
    PrimitiveInvocation,
    SimContext,
    default_registry,
    execute_primitive,
    load_registry,
    write_log_jsonl,
)
from fineassembly.task import initial_world, run_compliant_grasp, run_pick_and_place


def _inv(pid, arm="left", action="", **params):
    return PrimitiveInvocation(pid, arm, params, action)


@pytest.fixture
def ctx(scenario):
    return scenario.context(0)


@pytest.fixture
def world(scenario):
    return initial_world(scenario, 0)


@pytest.fixture
def pregrasp(world, scenario, ctx):
    """Left arm open, 5 cm above the pin grasp point."""
    T = world.perceived["pin"].matrix() @ scenario.pin_grasp()
    T[2, 3] = scenario.pregrasp
    w, _ = execute_primitive(world, _inv(2, target=T, opening=0.02), ctx)
    return w


@pytest.fixture(scope="module")
def holding(scenario):
    """Pin in the left gripper, stick at the insertion pose."""
    ctx = scenario.context(0)
    w, _ = run_compliant_grasp(initial_world(scenario, 0), scenario, ctx)
    w, _ = run_pick_and_place(w, scenario, ctx)
    return w


# ------------------------------------------------------------ registry


def test_registry_covers_three_levels():
    reg = default_registry()
    levels = reg.levels()
    assert set(levels) == set(InteractionLevel)
    assert all(levels[lv] for lv in InteractionLevel)
    assert {2, 3, 5, 9, 10, 11, 13, 14, 15, 16} == set(reg)
    assert reg[14].control_mode is ControlMode.FORCE and reg[14].control_mode.compliant
    assert not reg[10].control_mode.compliant


def test_registry_file_extends(tmp_path):
    p = tmp_path / "r.json"
    p.write_text(json.dumps({"version": 1, "primitives": [
        {"id": 40, "name": "push", "mode": "force", "level": "single_object", "executor": "force_motion"}]}))
    reg = load_registry(p)
    assert 40 in reg and 2 in reg


def test_registry_file_errors(tmp_path):
    p = tmp_path / "r.json"
    p.write_text(json.dumps({"version": 1, "primitives": [
        {"id": 41, "name": "x", "mode": "force", "level": "single_object", "executor": "teleport"}]}))
    with pytest.raises(ConfigError, match="unknown executor"):
        load_registry(p)
    p.write_text(json.dumps({"version": 1, "primitives": [{"id": 42, "mode": "force", "level": "single_object"}]}))
    with pytest.raises(ConfigError, match="missing key 'name'"):
        load_registry(p)
    p.write_text(json.dumps({"version": 1, "primitives": [
        {"id": 43, "name": "y", "mode": "levitate", "level": "single_object"}]}))
    with pytest.raises(ConfigError):
        load_registry(p)


def test_packaged_registry_matches_builtin(scenario):
    from fineassembly.model import data_path

    reg = load_registry(data_path("primitives.json"))
    assert {k: v.to_dict() for k, v in reg.items()} == {k: v.to_dict() for k, v in default_registry().items()}


# ------------------------------------------------------------ validation


def test_force_setpoint_rules(world, ctx):
    with pytest.raises(InvocationError, match="needs a force"):
        execute_primitive(world, _inv(14), ctx)
    with pytest.raises(InvocationError, match="takes no force"):
        execute_primitive(world, _inv(2, target=np.eye(4), force=[0, 0, -1]), ctx)
    with pytest.raises(InvocationError, match="exceeds sensor range"):
        execute_primitive(world, _inv(5, force=[0, 0, -200.0]), ctx)
    with pytest.raises(InvocationError, match="3-vector"):
        execute_primitive(world, _inv(5, force=[1.0, 2.0]), ctx)


def test_unknown_primitive_and_arm(world, ctx):
    with pytest.raises(KeyError):
        execute_primitive(world, _inv(99), ctx)
    with pytest.raises(InvocationError, match="unknown arm"):
        execute_primitive(world, _inv(2, arm="middle", target=np.eye(4)), ctx)


def test_impedance_primitive_has_no_executor(world, ctx):
    with pytest.raises(InvocationError, match="no executor"):
        execute_primitive(world, _inv(15, force=[0, 0, 1.0]), ctx)


def test_release_with_nothing_held(world, ctx):
    with pytest.raises(PrimitiveFailure, match="nothing to release") as exc:
        execute_primitive(world, _inv(3), ctx)
    assert exc.value.log.outcome.startswith("failed:")
    assert exc.value.log.data["reason"] == "precondition"


def test_execute_does_not_mutate_input(world, ctx):
    T = world.tool_pose("left")
    T[2, 3] += 0.05
    before = world.arms["left"].q.copy()
    w2, log = execute_primitive(world, _inv(2, target=T, planned=False), ctx)
    np.testing.assert_array_equal(world.arms["left"].q, before)
    assert w2.tool_pose("left")[2, 3] == pytest.approx(T[2, 3], abs=1e-5)
    assert log.outcome == "ok" and log.end_s > log.start_s


# ------------------------------------------------------------ position executors


def test_position_primitives_do_not_read_the_sensor(scenario):
    ctx = scenario.context(0)
    w = initial_world(scenario, 0)
    reads_before = ctx.sensor("right").reads
    w, logs = run_pick_and_place(w, scenario, ctx)
    assert [log.primitive_id for log in logs] == [2, 9, 11]
    assert ctx.sensor("right").reads == reads_before == 0


def test_compliant_primitives_read_the_sensor(scenario):
    ctx = scenario.context(0)
    run_compliant_grasp(initial_world(scenario, 0), scenario, ctx)
    assert ctx.sensor("left").reads > 0


def test_grasp_precondition_errors(holding, ctx):
    with pytest.raises(PrimitiveFailure, match="already held"):
        execute_primitive(holding, _inv(9, arm="left", object="stick"), ctx)
    with pytest.raises(PrimitiveFailure, match="absent object"):
        execute_primitive(holding, _inv(9, arm="left", object="cup"), ctx)


def test_grasp_miss_far_from_object(world, ctx):
    T = world.tool_pose("left")
    with pytest.raises(PrimitiveFailure, match="grasp miss"):
        execute_primitive(world, _inv(9, object="pin"), ctx)
    assert "pin" not in world.attachments and T is not None


def test_transport_needs_held_object(world, ctx):
    with pytest.raises(PrimitiveFailure, match="holds nothing"):
        execute_primitive(world, _inv(11, lift=0.05), ctx)


def test_held_object_follows_tool(holding, ctx):
    S0 = holding.object_pose("pin")
    T0 = holding.tool_pose("left")
    w, _ = execute_primitive(holding, _inv(11, lift=0.03), ctx)
    S1 = w.object_pose("pin")
    np.testing.assert_allclose(S1[:3, 3] - S0[:3, 3], w.tool_pose("left")[:3, 3] - T0[:3, 3], atol=1e-9)


def test_unreachable_target(world, ctx):
    T = make_transform(None, [3.0, 0.0, 0.5])
    with pytest.raises(PrimitiveFailure, match="unreachable"):
        execute_primitive(world, _inv(2, target=T, planned=False), ctx)


# ------------------------------------------------------------ compliant executors


def test_contact_without_table_hits_travel_limit(world, scenario):
    ctx = replace(scenario.context(0), table_height=-math.inf, plan=False)
    with pytest.raises(PrimitiveFailure, match="no contact") as exc:
        execute_primitive(world, _inv(5, force=[0, 0, -5.0]), ctx)
    assert exc.value.log.data["reason"] == "no_contact"


def test_contact_settles_and_holds_during_close(pregrasp, ctx):
    w, log = execute_primitive(pregrasp, _inv(5, force=[0, 0, -5.0]), ctx)
    assert abs(log.data["force"][2] + 5.0) <= 0.05
    w, log = execute_primitive(w, _inv(5, force=[0, 0, -5.0], gripper="close", width=0.008), ctx)
    assert log.data["close_in_contact"]
    assert log.data["close_force_error"] < 0.05
    assert w.arms["left"].opening == pytest.approx(0.008)


def test_close_without_feedforward_is_worse(pregrasp, scenario):
    ctx = scenario.context(0)
    w, _ = execute_primitive(pregrasp, _inv(5, force=[0, 0, -5.0]), ctx)
    _, with_ff = execute_primitive(w, _inv(5, force=[0, 0, -5.0], gripper="close", width=0.008), ctx)
    ctx2 = replace(scenario.context(0), gripper_feedforward=False)
    _, without = execute_primitive(w, _inv(5, force=[0, 0, -5.0], gripper="close", width=0.008), ctx2)
    assert without.data["close_force_error"] > 10 * with_ff.data["close_force_error"]


def _above_hole(holding, scenario, dx=0.0, dy=0.0):
    S = holding.believed_pose("stick")
    hole = holding.objects["stick"].holes[0]
    c = S[:3, :3] @ hole.position + S[:3, 3]
    return c + S[:3, 0] * dx + S[:3, 1] * dy, S


def _place_pin_above(holding, ctx, P):
    """Hover the pin tip (believed) over point ``P``."""
    from fineassembly.task import _pin_pose_upright

    base = holding.arms["left"].model.base_pose[:3, 3]
    G = holding.attachments["pin"].grasp_believed
    T = _pin_pose_upright(P + [0, 0, 0.006], P - base) @ G
    w, _ = execute_primitive(holding, _inv(10, target=T), ctx)
    return w


def test_force_motion_into_open_hole(holding, scenario, ctx):
    P, _ = _above_hole(holding, scenario)
    w = _place_pin_above(holding, ctx, P)
    w, log = execute_primitive(w, _inv(14, force=[0, 0, -10.0]), ctx)
    assert log.data["captured"] and log.data["termination"] == "settled"
    assert log.data["travel"] > 0.009


def test_force_motion_on_solid_surface(holding, scenario, ctx):
    P, _ = _above_hole(holding, scenario, dy=-0.02)
    w = _place_pin_above(holding, ctx, P)
    w, log = execute_primitive(w, _inv(14, force=[0, 0, -10.0]), ctx)
    assert not log.data["captured"]
    assert log.data["travel"] == pytest.approx(0.006, abs=5e-4)
    assert abs(log.data["force"][2] + 10.0) < 0.1


def test_force_motion_zero_setpoint_stays_put(holding, scenario, ctx):
    P, _ = _above_hole(holding, scenario, dy=-0.02)
    w = _place_pin_above(holding, ctx, P)
    w, log = execute_primitive(w, _inv(14, force=[0, 0, 0.0], direction=[0, 0, -1]), ctx)
    assert log.data["termination"] == "settled"
    assert abs(log.data["travel"]) < 1e-9


def test_force_motion_depth_limit(holding, scenario, ctx):
    P, _ = _above_hole(holding, scenario)
    w = _place_pin_above(holding, ctx, P)
    _, log = execute_primitive(w, _inv(14, force=[0, 0, -10.0], depth=0.004), ctx)
    assert log.data["termination"] == "depth"
    assert 0.004 <= log.data["travel"] < 0.0042


@pytest.mark.parametrize("offset_mm", [0.0, 2.0])
def test_slide_edge_detected(holding, scenario, ctx, offset_mm):
    P, S = _above_hole(holding, scenario, dx=offset_mm * 1e-3, dy=0.02)
    w = _place_pin_above(holding, ctx, P)
    u = S[:3, 0]
    w, _ = execute_primitive(w, _inv(14, force=[0, 0, -5.0]), ctx)
    w, log = execute_primitive(w, _inv(16, force=[0, 0, -5.0], direction=u, detector="edge", travel=0.05), ctx)
    # true edge, mapped into believed coordinates through the grasp error
    S_true = w.object_pose("stick")
    edge_true = S_true[:3, 3] + S_true[:3, 0] * 0.025
    from fineassembly.primitives import TipContact

    delta = TipContact(w, "left", ctx).delta
    err = abs(np.dot(np.array(log.data["feature"]) + delta[:2] - edge_true[:2], u[:2]))
    assert err <= 0.2e-3


def test_slide_hole_detected(holding, scenario, ctx):
    P, S = _above_hole(holding, scenario, dy=-0.008)
    w = _place_pin_above(holding, ctx, P)
    w, _ = execute_primitive(w, _inv(14, force=[0, 0, -5.0]), ctx)
    _, log = execute_primitive(w, _inv(16, force=[0, 0, -5.0], direction=S[:3, 1], detector="hole", travel=0.016), ctx)
    assert log.data["captured"]
    assert log.data["lateral_error"] <= scenario.radial_clearance + 1e-9


def test_slide_without_feature_fails(holding, scenario, ctx):
    P, S = _above_hole(holding, scenario, dy=0.02)
    w = _place_pin_above(holding, ctx, P)
    w, _ = execute_primitive(w, _inv(14, force=[0, 0, -5.0]), ctx)
    with pytest.raises(PrimitiveFailure, match="edge not found"):
        execute_primitive(w, _inv(16, force=[0, 0, -5.0], direction=S[:3, 0], detector="edge", travel=0.005), ctx)


def test_sliding_force_stays_in_sensor_range(holding, scenario, ctx):
    P, S = _above_hole(holding, scenario, dy=0.02)
    w = _place_pin_above(holding, ctx, P)
    w, log = execute_primitive(w, _inv(14, force=[0, 0, -30.0]), ctx)
    limit = w.arms["left"].model.sensor_range.force
    assert np.all(np.abs(log.data["force"]) <= limit)


# ------------------------------------------------------------ random sequences


_STEPS = st.lists(st.sampled_from(["lift", "release", "regrasp", "approach"]), min_size=1, max_size=6)


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(_STEPS)
def test_attachment_invariant_under_random_sequences(holding, scenario, steps):
    ctx = scenario.context(0)
    w = holding
    for s in steps:
        if s == "lift":
            inv = _inv(11, lift=0.02)
        elif s == "release":
            inv = _inv(3)
        elif s == "regrasp":
            inv = _inv(9, object="pin")
        else:
            T = w.tool_pose("left")
            T[2, 3] += 0.01
            inv = _inv(2, target=T, planned=False)
        try:
            w, _ = execute_primitive(w, inv, ctx)
        except PrimitiveFailure:
            pass
        w.check_invariants()
        holders = [a.arm for a in w.attachments.values()]
        assert len(holders) == len(set(holders))
        assert w.held_by("right") == "stick"


def test_log_jsonl(tmp_path, world, ctx):
    T = world.tool_pose("left")
    T[2, 3] += 0.02
    _, log = execute_primitive(world, _inv(2, action="lift a bit", target=T, planned=False), ctx)
    write_log_jsonl([log], tmp_path / "l.jsonl")
    row = json.loads((tmp_path / "l.jsonl").read_text())
    assert row["action"] == "lift a bit" and row["primitive_id"] == 2 and row["outcome"] == "ok"
