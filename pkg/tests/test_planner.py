import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fineassembly.model import make_transform
from fineassembly.planner import (
    ArmRequest,
    Box,
    CollisionScene,
    PlanningError,
    RRTParams,
    collides,
    densify,
    edge_free,
    frozen_arm,
    prioritized_plan,
    rrt_connect,
    segment_box_distance,
    segment_distance,
    table_box,
    validate_path,
)
from fineassembly.workspace import facing_bases

HOME = np.array([0.0, 0.05, 0.3, 0.0, 1.2, 0.0])


def _pt_seg(p, a, b):
    t = np.clip(np.dot(p - a, b - a) / np.dot(b - a, b - a), 0, 1)
    return np.linalg.norm(p - (a + t * (b - a)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_segment_distance_against_sampling(seed):
    rng = np.random.default_rng(seed)
    p0, p1, q0, q1 = rng.normal(size=(4, 3))
    d = float(segment_distance(p0, p1, q0, q1))
    s = np.linspace(0, 1, 401)
    brute = min(_pt_seg(p0 + t * (p1 - p0), q0, q1) for t in s)
    assert d <= brute + 1e-12
    assert d >= brute - 5e-3


def test_segment_box_distance_cases():
    box = Box("b", np.eye(4), np.array([0.1, 0.1, 0.1]))
    far = segment_box_distance(np.array([0.5, 0, 0]), np.array([0.5, 0.3, 0]), box)
    assert float(far) == pytest.approx(0.4, abs=1e-6)
    through = segment_box_distance(np.array([-1.0, 0, 0]), np.array([1.0, 0, 0]), box)
    assert float(through) < 0


def test_home_is_free_and_table_ignores_base(model):
    scene = CollisionScene(model, [table_box()])
    assert not collides(scene, HOME)
    q = HOME.copy()
    q[1] = 1.8  # fold forward into the table
    assert collides(scene, q)
    assert "table" in scene.blockers(q)


def test_edge_free_detects_thin_wall(model):
    a = HOME.copy()
    b = HOME.copy()
    a[0], b[0] = -0.8, 0.8
    from fineassembly.kinematics import fk_matrix

    tcp = fk_matrix(model, HOME, "tcp")[:3, 3]
    wall = Box("wall", make_transform(None, tcp), np.array([0.05, 0.005, 0.05]))
    scene = CollisionScene(model, [table_box(), wall])
    assert not collides(scene, a) and not collides(scene, b)
    assert not edge_free(scene, a, b)
    assert edge_free(CollisionScene(model, [table_box()]), a, b)


def test_rrt_around_obstacle(model):
    from fineassembly.kinematics import fk_matrix

    a = HOME.copy()
    b = HOME.copy()
    a[0], b[0] = -0.8, 0.8
    tcp = fk_matrix(model, HOME, "tcp")[:3, 3]
    wall = Box("wall", make_transform(None, tcp + [0, 0, -0.05]), np.array([0.06, 0.01, 0.08]))
    scene = CollisionScene(model, [table_box(), wall])
    path = rrt_connect(scene, a, b, RRTParams(budget=5000), seed=0)
    assert len(path) > 2
    assert np.max(np.abs(np.diff(path.waypoints, axis=0))) <= RRTParams().step + 1e-12
    assert validate_path(scene, path, 0.005)


def test_rrt_is_deterministic(model):
    a, b = HOME.copy(), HOME.copy()
    a[0], b[0] = -0.8, 0.8
    from fineassembly.kinematics import fk_matrix

    tcp = fk_matrix(model, HOME, "tcp")[:3, 3]
    wall = Box("wall", make_transform(None, tcp + [0, 0, -0.05]), np.array([0.06, 0.01, 0.08]))
    scene = CollisionScene(model, [table_box(), wall])
    p1 = rrt_connect(scene, a, b, RRTParams(budget=5000), seed=4)
    p2 = rrt_connect(scene, a, b, RRTParams(budget=5000), seed=4)
    np.testing.assert_array_equal(p1.waypoints, p2.waypoints)


def test_rrt_rejects_bad_endpoints(model):
    scene = CollisionScene(model, [table_box()])
    bad = HOME.copy()
    bad[1] = 1.8
    with pytest.raises(PlanningError, match="start configuration in collision") as exc:
        rrt_connect(scene, bad, HOME)
    assert "table" in exc.value.blocker
    with pytest.raises(PlanningError, match="outside joint limits"):
        rrt_connect(scene, HOME, model.upper + 1.0)


def test_trivial_path(model):
    scene = CollisionScene(model, [table_box()])
    assert len(rrt_connect(scene, HOME, HOME)) == 1


def test_densify_keeps_endpoints():
    pts = np.array([[0.0, 0.0], [1.0, 0.5]])
    d = densify(pts, 0.1)
    assert len(d) == 11
    np.testing.assert_array_equal(d[-1], pts[-1])


def test_prioritized_frozen_convention(model):
    A, B = facing_bases(1.0)
    ma, mb = model.with_base(A), model.with_base(B)
    reqs = [
        ArmRequest("left", ma, np.array([-0.8, 0.3, 0.3, 0, 1.2, 0]), np.array([0.6, 0.6, 0.3, 0, 1.2, 0])),
        ArmRequest("right", mb, np.array([0.8, 0.3, 0.3, 0, 1.2, 0]), np.array([-0.4, 0.6, 0.3, 0, 1.2, 0])),
    ]
    paths = prioritized_plan(reqs, [table_box()], RRTParams(budget=5000))
    assert set(paths) == {"left", "right"}
    later = CollisionScene(mb, [table_box()], [frozen_arm("left", ma, reqs[0].goal)])
    assert validate_path(later, paths["right"], 0.01)


def test_prioritized_reports_blocked_arm(model):
    # both arms reach for the same spot between the bases; the left arm
    # gets there first and the right arm finds its goal occupied
    A, B = facing_bases(1.0)
    ma, mb = model.with_base(A), model.with_base(B)
    reach = np.array([0.0, 0.79, 0.01, 0, 0.59, 0])
    reqs = [ArmRequest("left", ma, HOME, reach), ArmRequest("right", mb, HOME, reach)]
    with pytest.raises(PlanningError) as exc:
        prioritized_plan(reqs, [table_box()], RRTParams(budget=200))
    assert exc.value.arm == "right"
