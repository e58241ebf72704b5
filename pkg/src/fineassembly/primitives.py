"""Manipulation primitives: taxonomy registry, world state and executors.

A primitive is classified by control mode (position or compliant) and by
interaction level (gripper only, one object, several objects). Executors
take a :class:`WorldState`, simulate the action and return the successor
state; :func:`execute_primitive` validates the invocation, dispatches and
logs the timed result.

Geometry conventions used by the executors:

* The tool frame sits at the fingertip center with its z axis pointing out
  of the gripper. Closing the gripper moves the fingertips forward by
  ``height_delta * (1 - opening / max_opening)``.
* Held objects are described by the tool pose expressed in the object
  frame (``grasp``); the controller only knows the *believed* grasp, the
  simulation uses the *true* one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .force_control import (
    ContactEnvironment,
    DivergenceError,
    ForceControllerState,
    ForceLoop,
    NoContactError,
    guarded_move,
)
from .kinematics import fk_matrix, solve_ik_batch
from .model import (
    ConfigError,
    ManipulatorModel,
    Pose,
    SceneObject,
    Wrench,
    invert_transform,
    make_transform,
    read_config,
)
from .planner import (
    CollisionScene,
    PlanningError,
    RRTParams,
    box_from_object,
    densify,
    edge_free,
    frozen_arm,
    rrt_connect,
    table_box,
)


# ---------------------------------------------------------------------------
# taxonomy


class ControlMode(str, Enum):
    POSITION = "position"
    FORCE = "force"
    IMPEDANCE = "impedance"

    @property
    def compliant(self) -> bool:
        return self is not ControlMode.POSITION


class InteractionLevel(str, Enum):
    GRIPPER_ONLY = "gripper_only"
    SINGLE_OBJECT = "single_object"
    MULTI_OBJECT = "multi_object"


@dataclass(frozen=True)
class PrimitiveSpec:
    id: int
    name: str
    control_mode: ControlMode
    interaction_level: InteractionLevel
    description: str = ""
    executor: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "control_mode", ControlMode(self.control_mode))
        object.__setattr__(self, "interaction_level", InteractionLevel(self.interaction_level))
        if int(self.id) != self.id or self.id < 0:
            raise ValueError(f"primitive id must be a non-negative integer, got {self.id!r}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "name": self.name,
            "mode": self.control_mode.value,
            "level": self.interaction_level.value,
            "description": self.description,
            "executor": self.executor,
        }


class Registry(Mapping[int, PrimitiveSpec]):
    """Primitive specs keyed by id."""

    def __init__(self, specs: Iterable[PrimitiveSpec]):
        self._specs: Dict[int, PrimitiveSpec] = {}
        for s in specs:
            if s.id in self._specs:
                raise ValueError(f"duplicate primitive id {s.id}")
            self._specs[s.id] = s

    def __getitem__(self, key: int) -> PrimitiveSpec:
        try:
            return self._specs[int(key)]
        except KeyError:
            raise UnknownPrimitiveError(f"unknown primitive id {key}") from None

    def __iter__(self):
        return iter(sorted(self._specs))

    def __len__(self) -> int:
        return len(self._specs)

    def levels(self) -> Dict[InteractionLevel, List[int]]:
        out: Dict[InteractionLevel, List[int]] = {lv: [] for lv in InteractionLevel}
        for i in self:
            out[self[i].interaction_level].append(i)
        return out

    def merged(self, extra: Iterable[PrimitiveSpec]) -> "Registry":
        specs = dict(self._specs)
        for s in extra:
            specs[s.id] = s
        return Registry(specs.values())


_BUILTIN = [
    (2, "approach", "position", "gripper_only", "Approach to a pregrasp or grasp pose", "approach"),
    (3, "release", "position", "gripper_only", "Open the gripper and let go of the held object", "release"),
    (5, "contact without motion", "force", "gripper_only",
     "Hold a contact force against a surface while the gripper acts", "contact_no_motion"),
    (9, "grasp", "position", "single_object", "Close the gripper on an object", "grasp"),
    (10, "move object above", "position", "single_object",
     "Carry the held object to a pose above another object", "transport"),
    (11, "pick up / place", "position", "single_object",
     "Lift, reposition or place the held object", "transport"),
    (13, "object contact without motion", "force", "multi_object",
     "Hold the held object against another object", "contact_no_motion"),
    (14, "force-controlled contact motion", "force", "multi_object",
     "Advance the held object under force control", "force_motion"),
    (15, "impedance-controlled extraction", "impedance", "multi_object",
     "Extract a held object with an impedance law", None),
    (16, "sliding exploration", "force", "multi_object",
     "Slide the held object over a surface until a feature is detected", "slide_explore"),
]


def default_registry() -> Registry:
    return Registry(PrimitiveSpec(*row) for row in _BUILTIN)


def registry_from_dicts(entries: Sequence[Mapping[str, Any]], ctx: str = "registry") -> List[PrimitiveSpec]:
    out = []
    for k, e in enumerate(entries):
        where = f"{ctx}[{k}]"
        try:
            out.append(PrimitiveSpec(
                int(e["id"]), str(e["name"]), e["mode"], e["level"],
                str(e.get("description", "")), e.get("executor"),
            ))
        except KeyError as exc:
            raise ConfigError(f"{where}: missing key {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        if out[-1].executor is not None and out[-1].executor not in EXECUTORS:
            raise ConfigError(f"{where}: unknown executor {out[-1].executor!r}")
    return out


def load_registry(path, base: Optional[Registry] = None) -> Registry:
    """Registry from a config file; entries add to (or replace) ``base``."""
    data = read_config(path)
    entries = data.get("primitives")
    if not isinstance(entries, list):
        raise ConfigError(f"{path}: expected a 'primitives' list")
    extra = registry_from_dicts(entries, ctx=str(path))
    ids = [s.id for s in extra]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"{path}: duplicate primitive ids")
    reg = (base if base is not None else default_registry()).merged(extra)
    empty = [lv.value for lv, ids in reg.levels().items() if not ids]
    if empty:
        raise ConfigError(f"{path}: interaction levels without primitives: {empty}")
    return reg


# ---------------------------------------------------------------------------
# invocations and logs


class UnknownPrimitiveError(KeyError):
    pass


class InvocationError(ValueError):
    pass


class ExecutorError(RuntimeError):
    """Executor-level failure; ``reason`` is a short machine-friendly tag."""

    def __init__(self, message: str, reason: str = "executor"):
        self.reason = reason
        super().__init__(message)


class PrimitiveFailure(RuntimeError):
    """Raised by :func:`execute_primitive`; carries the failed log entry."""

    def __init__(self, log: "PrimitiveLog", cause: Exception):
        self.log = log
        self.cause = cause
        super().__init__(f"primitive {log.primitive_id} ({log.action}) failed: {cause}")


@dataclass(frozen=True)
class PrimitiveInvocation:
    primitive_id: int
    arm: str
    params: Mapping[str, Any] = field(default_factory=dict)
    action: str = ""


@dataclass
class PrimitiveLog:
    start_s: float
    end_s: float
    primitive_id: int
    action: str
    outcome: str
    arm: str = ""
    data: Dict[str, Any] = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s

    def to_dict(self) -> Dict[str, Any]:
        return {
            "start_s": round(self.start_s, 6),
            "end_s": round(self.end_s, 6),
            "primitive_id": self.primitive_id,
            "action": self.action,
            "outcome": self.outcome,
            "arm": self.arm,
        }


def write_log_jsonl(logs: Sequence[PrimitiveLog], path) -> None:
    with open(path, "w") as fh:
        for entry in logs:
            fh.write(json.dumps(entry.to_dict(), sort_keys=True) + "\n")


def validate_invocation(spec: PrimitiveSpec, inv: PrimitiveInvocation, model: ManipulatorModel) -> None:
    """Force setpoint present iff the mode is compliant, and inside the
    sensor's range."""
    has_force = inv.params.get("force") is not None
    if spec.control_mode.compliant and not has_force:
        raise InvocationError(f"primitive {spec.id} is compliant and needs a force setpoint")
    if not spec.control_mode.compliant and has_force:
        raise InvocationError(f"primitive {spec.id} is position-controlled and takes no force setpoint")
    if has_force:
        f = np.asarray(inv.params["force"], dtype=float)
        if f.shape != (3,) or not np.all(np.isfinite(f)):
            raise InvocationError("force setpoint must be a finite 3-vector")
        limit = np.asarray(model.sensor_range.force)
        if np.any(np.abs(f) > limit):
            raise InvocationError(f"force setpoint {f.tolist()} N exceeds sensor range {limit.tolist()} N")


# ---------------------------------------------------------------------------
# world state


class ForceSensor:
    """Counts force samples so tests can check who reads the sensor."""

    def __init__(self):
        self.reads = 0

    def count(self) -> None:
        self.reads += 1


@dataclass
class ArmState:
    name: str
    model: ManipulatorModel
    q: np.ndarray
    opening: float
    tool_override: Optional[np.ndarray] = None  # Cartesian tool pose during compliant phases
    contact: bool = False
    closed_from: Optional[float] = None  # opening before the last close

    @property
    def extension(self) -> float:
        g = self.model.gripper
        return g.height_delta * (1.0 - self.opening / g.max_opening)


@dataclass(frozen=True)
class Attachment:
    arm: str
    grasp_true: np.ndarray  # tool pose in the object frame
    grasp_believed: np.ndarray


@dataclass
class WorldState:
    arms: Dict[str, ArmState]
    objects: Dict[str, SceneObject]  # true poses of free objects
    perceived: Dict[str, Pose] = field(default_factory=dict)
    attachments: Dict[str, Attachment] = field(default_factory=dict)
    time: float = 0.0

    def copy(self) -> "WorldState":
        return WorldState(
            {k: replace(a) for k, a in self.arms.items()},
            dict(self.objects), dict(self.perceived), dict(self.attachments), self.time,
        )

    def tool_pose(self, arm: str) -> np.ndarray:
        a = self.arms[arm]
        if a.tool_override is not None:
            return a.tool_override.copy()
        T = fk_matrix(a.model, a.q, "tcp")
        T[:3, 3] += T[:3, 2] * a.extension
        return T

    def held_by(self, arm: str) -> Optional[str]:
        for name, att in self.attachments.items():
            if att.arm == arm:
                return name
        return None

    def object_pose(self, name: str) -> np.ndarray:
        """True world transform of an object."""
        att = self.attachments.get(name)
        if att is None:
            return self.objects[name].pose.matrix()
        return self.tool_pose(att.arm) @ invert_transform(att.grasp_true)

    def believed_pose(self, name: str) -> np.ndarray:
        att = self.attachments.get(name)
        if att is None:
            return self.perceived.get(name, self.objects[name].pose).matrix()
        return self.tool_pose(att.arm) @ invert_transform(att.grasp_believed)

    def object(self, name: str) -> SceneObject:
        return self.objects[name].with_pose(Pose.from_matrix(self.object_pose(name)))

    def check_invariants(self) -> None:
        arms = [a.arm for a in self.attachments.values()]
        if len(arms) != len(set(arms)):
            raise AssertionError("an arm holds more than one object")
        for name, att in self.attachments.items():
            if att.arm not in self.arms or name not in self.objects:
                raise AssertionError(f"dangling attachment {name} -> {att.arm}")


# ---------------------------------------------------------------------------
# simulation context


@dataclass
class SimContext:
    controller: ForceControllerState = field(default_factory=ForceControllerState)
    registry: Registry = field(default_factory=default_registry)
    tip_stiffness: float = 1e4  # fingertips against rigid surfaces (N/m)
    contact_stiffness: float = 1e5  # held object against wood (N/m)
    table_height: float = 0.0
    speed_scale: float = 0.5  # fraction of joint velocity/acceleration limits
    approach_speed: float = 0.02  # guarded moves (m/s)
    contact_threshold: float = 1.0  # N
    settle_tolerance: float = 0.01  # fraction of |f_r|
    settle_samples: int = 50
    timeout: float = 5.0  # s, per compliant phase
    close_time: float = 1.0  # s
    gripper_feedforward: bool = True
    slide_step: float = 1e-4  # m per sample
    edge_drop: float = 2e-3
    edge_samples: int = 3
    hole_drop: float = 3e-3
    clearance: float = 0.08  # via-pose lift for planned moves (m)
    plan: bool = True
    rrt: RRTParams = field(default_factory=lambda: RRTParams(budget=5000))
    seed: int = 0
    sensors: Dict[str, ForceSensor] = field(default_factory=dict)

    def sensor(self, arm: str) -> ForceSensor:
        return self.sensors.setdefault(arm, ForceSensor())


# ---------------------------------------------------------------------------
# kinematic helpers


def tool_to_tcp(arm: ArmState, T_tool: np.ndarray) -> np.ndarray:
    T = np.array(T_tool, dtype=float)
    T[:3, 3] -= T[:3, 2] * arm.extension
    return T


def _ik_seeds(arm: ArmState, T: np.ndarray) -> np.ndarray:
    m = arm.model
    p = invert_transform(m.base_pose) @ np.append(T[:3, 3], 1.0)
    mid = m.midpoints.copy()
    seeds = [arm.q]
    for j3 in (0.6, -0.6, 1.2):
        s = mid.copy()
        s[0] = math.atan2(p[1], p[0])
        s[2] = j3
        seeds.append(s)
    return np.clip(np.array(seeds), m.lower, m.upper)


def solve_tool_ik(arm: ArmState, T_tool: np.ndarray) -> np.ndarray:
    """Configuration placing the tool at ``T_tool``, closest to ``arm.q``."""
    target = tool_to_tcp(arm, T_tool)
    q, ok, _ = solve_ik_batch(arm.model, target[None], arm.q[None], frame="tcp", stall_window=25)
    if ok[0] and np.abs(q[0] - arm.q).max() < 1.5:
        return q[0]
    seeds = _ik_seeds(arm, target)
    q, ok, _ = solve_ik_batch(arm.model, np.repeat(target[None], len(seeds), 0), seeds, frame="tcp")
    if not ok.any():
        raise ExecutorError(f"{arm.name}: tool target at {np.round(T_tool[:3, 3], 4).tolist()} unreachable", "unreachable")
    cand = q[ok]
    return cand[int(np.argmin(np.abs(cand - arm.q).sum(axis=1)))]


def motion_time(model: ManipulatorModel, path: np.ndarray, scale: float) -> float:
    """Trapezoidal-profile duration for the slowest joint along ``path``."""
    path = np.atleast_2d(path)
    if len(path) < 2:
        return 0.0
    dist = np.abs(np.diff(path, axis=0)).sum(axis=0)
    v = model.velocity_limits * scale
    a = model.acceleration_limits * scale
    full = dist >= v * v / a
    t = np.where(full, dist / v + v / a, 2.0 * np.sqrt(dist / a))
    return float(t.max())


def sync_arm(world: WorldState, arm: str) -> None:
    """Fold a Cartesian override back into joint space."""
    a = world.arms[arm]
    if a.tool_override is None:
        return
    q = solve_tool_ik(replace(a, tool_override=None), a.tool_override)
    world.arms[arm] = replace(a, q=q, tool_override=None)


def _scene_for(world: WorldState, arm: str, ctx: SimContext) -> CollisionScene:
    boxes = [table_box(top=ctx.table_height)]
    held = world.held_by(arm)
    for name, obj in world.objects.items():
        if name == held or obj.kind == "table":
            continue
        boxes.append(box_from_object(world.object(name)))
    frozen = [frozen_arm(o, world.arms[o].model, world.arms[o].q) for o in world.arms if o != arm]
    return CollisionScene(world.arms[arm].model, boxes, frozen)


def _lifted(T: np.ndarray, dz: float) -> np.ndarray:
    out = T.copy()
    out[2, 3] += dz
    return out


def move_tool(world: WorldState, arm: str, T_goal: np.ndarray, ctx: SimContext, planned: bool = True,
              pre_lift: float = 0.0) -> Dict[str, Any]:
    """Position-mode move of the tool to ``T_goal``.

    Planned moves rise vertically to a via pose, plan in joint space to the
    via pose above the goal and descend vertically; the short vertical legs
    are the contact-side approach and are not collision checked.
    """
    sync_arm(world, arm)
    a = world.arms[arm]
    q0 = a.q
    if planned and ctx.plan:
        T0 = world.tool_pose(arm)
        top = max(T0[2, 3], T_goal[2, 3]) + ctx.clearance
        q_up = solve_tool_ik(a, _lifted(T0, top - T0[2, 3]))
        q_above = solve_tool_ik(replace(a, q=q_up), _lifted(T_goal, top - T_goal[2, 3]))
        q1 = solve_tool_ik(replace(a, q=q_above), T_goal)
        scene = _scene_for(world, arm, ctx)
        if edge_free(scene, q_up, q_above):
            mid = np.array([q_up, q_above])
        else:
            try:
                mid = rrt_connect(scene, q_up, q_above, ctx.rrt, seed=ctx.seed).waypoints
            except PlanningError as exc:
                raise ExecutorError(f"{arm}: {exc}", "planning") from None
        path = np.vstack([q0[None], mid, q1[None]])
    elif pre_lift > 0:
        q_up = solve_tool_ik(a, _lifted(world.tool_pose(arm), pre_lift))
        q1 = solve_tool_ik(replace(a, q=q_up), T_goal)
        path = np.array([q0, q_up, q1])
    else:
        q1 = solve_tool_ik(a, T_goal)
        path = np.array([q0, q1])
    world.arms[arm] = replace(a, q=q1, tool_override=None, contact=False)
    world.time += motion_time(a.model, path, ctx.speed_scale)
    err = float(np.linalg.norm(world.tool_pose(arm)[:3, 3] - T_goal[:3, 3]))
    return {"waypoints": int(len(path)), "position_error": err}


# ---------------------------------------------------------------------------
# contact geometry


class TipContact:
    """Support seen by the arm's contact point.

    The contact point is the tip of the held pin, or the fingertip center
    for an empty gripper. All heights are returned in *believed*
    coordinates: the controller servos the believed tip, the world reacts
    at the true tip, which differs by the constant ``delta`` while the tool
    orientation is fixed.
    """

    def __init__(self, world: WorldState, arm: str, ctx: SimContext, surfaces: Optional[Sequence[str]] = None):
        T = world.tool_pose(arm)
        self.R = T[:3, :3]
        held = world.held_by(arm)
        self.table = ctx.table_height
        self.sticks = []
        if held is not None and world.objects[held].kind == "pin":
            att = world.attachments[held]
            pin = world.objects[held]
            # pin tip = object frame origin (bottom face center)
            self.local_true = invert_transform(att.grasp_true)[:3, 3]
            self.local_believed = invert_transform(att.grasp_believed)[:3, 3]
            self.radius = float(pin.radius)
            self.stiffness = ctx.contact_stiffness
            tip = T[:3, :3] @ self.local_true + T[:3, 3]
            self.protrusion = self._gripper_low(T) - float(tip[2])
            names = surfaces if surfaces is not None else [
                n for n, o in world.objects.items() if o.kind == "stick" and n != held]
            for n in names:
                obj = world.object(n)
                S = obj.pose.matrix()
                holes = []
                for h in obj.holes:
                    c = S[:3, :3] @ h.position + S[:3, 3]
                    capture = 0.5 * (h.diameter - 2.0 * self.radius) + h.chamfer
                    holes.append((c, h, capture))
                self.sticks.append((invert_transform(S), np.asarray(obj.extents) / 2.0,
                                    float(S[2, 3] + obj.height), holes))
        else:
            self.local_true = np.zeros(3)
            self.local_believed = np.zeros(3)
            self.radius = 0.0
            self.stiffness = ctx.tip_stiffness
            self.protrusion = math.inf
        self.delta = self.R @ (self.local_true - self.local_believed)
        self.locked: Optional[np.ndarray] = None
        self.captured_by: Optional[Tuple[np.ndarray, Any]] = None

    def _gripper_low(self, T: np.ndarray) -> float:
        """Lowest point of the finger pads in world z."""
        hw = 0.011
        pts = np.array([[0, s * hw, d] for s in (-1, 1) for d in (0.0, -0.04)])
        return float(np.min(pts @ T[:3, :3].T[:, 2] + T[2, 3]))

    def believed_tip(self, T_tool: np.ndarray) -> np.ndarray:
        return T_tool[:3, :3] @ self.local_believed + T_tool[:3, 3]

    def tool_from_tip(self, p_believed: np.ndarray) -> np.ndarray:
        return make_transform(self.R, np.asarray(p_believed) - self.R @ self.local_believed)

    def _hole_hit(self, p: np.ndarray):
        for _, _, top, holes in self.sticks:
            for c, h, capture in holes:
                e = float(np.hypot(p[0] - c[0], p[1] - c[1]))
                if e < capture:
                    return c, h, top, e
        return None

    def support_true(self, p: np.ndarray) -> float:
        h = self.table
        for Sinv, half, top, holes in self.sticks:
            uv = Sinv[:2, :3] @ p + Sinv[:2, 3]
            gap = np.maximum(np.abs(uv) - half[:2], 0.0)
            if float(np.hypot(*gap)) > self.radius:
                continue
            level = top
            hit = self._hole_hit(p)
            if hit is not None:
                _, hole, _, _ = hit
                level = top - min(hole.depth, self.protrusion)
            h = max(h, level)
        return h

    def surface(self, p_believed: np.ndarray) -> float:
        p = np.asarray(p_believed) + self.delta
        return self.support_true(p) - self.delta[2]

    def constrain(self, p_believed: np.ndarray) -> np.ndarray:
        """Inside a hole the pin cannot move sideways; entering through the
        chamfer centers it to within the radial clearance."""
        p = np.asarray(p_believed, dtype=float) + self.delta
        if self.locked is not None:
            if p[2] < self.locked[2]:
                p[:2] = self.locked[:2]
                return p - self.delta
            self.locked = None
        hit = self._hole_hit(p)
        if hit is not None:
            c, hole, top, e = hit
            if p[2] < top:
                clr = 0.5 * (hole.diameter - 2.0 * self.radius)
                off = p[:2] - c[:2]
                if e > clr:
                    off *= clr / e
                p[:2] = c[:2] + off
                self.locked = np.array([p[0], p[1], top])
                self.captured_by = (c, hole)
        return p - self.delta

    def environment(self) -> ContactEnvironment:
        return ContactEnvironment(self.stiffness, self.surface)


# ---------------------------------------------------------------------------
# position-mode executors


def _target(params: Mapping[str, Any], key: str = "target") -> np.ndarray:
    T = params.get(key)
    if T is None:
        raise InvocationError(f"missing parameter {key!r}")
    if isinstance(T, Pose):
        return T.matrix()
    T = np.asarray(T, dtype=float)
    if T.shape != (4, 4):
        raise InvocationError(f"{key} must be a 4x4 transform or Pose")
    return T


def executor_approach(world: WorldState, inv: PrimitiveInvocation, ctx: SimContext):
    """Move the (empty or loaded) gripper to ``target``; optional ``opening``
    is commanded first."""
    arm = inv.arm
    if "opening" in inv.params:
        sync_arm(world, arm)
        world.arms[arm] = replace(world.arms[arm], opening=float(inv.params["opening"]))
    data = move_tool(world, arm, _target(inv.params), ctx, planned=inv.params.get("planned", True))
    return world, data


def executor_transport(world: WorldState, inv: PrimitiveInvocation, ctx: SimContext):
    """Move the held object. ``object_target`` is the desired (believed)
    object pose and ``target`` a tool pose; ``lift`` alone is a vertical
    move, with a target it is a vertical retreat before the move."""
    arm = inv.arm
    held = world.held_by(arm)
    if held is None and not inv.params.get("allow_empty", False):
        raise ExecutorError(f"{arm} holds nothing to transport", "precondition")
    p = inv.params
    if "object_target" in p:
        T = _target(p, "object_target") @ world.attachments[held].grasp_believed
    elif "target" in p:
        T = _target(p)
    elif "lift" in p:
        T = _lifted(world.tool_pose(arm), float(p["lift"]))
    else:
        raise InvocationError("transport needs object_target, target or lift")
    pre = float(p.get("lift", 0.0)) if ("object_target" in p or "target" in p) else 0.0
    data = move_tool(world, arm, T, ctx, planned=p.get("planned", True), pre_lift=pre)
    return world, data


def _pad_check(obj: SceneObject, g: np.ndarray, opening: float) -> Optional[str]:
    """Why a grasp with tool origin at object-frame point ``g`` misses."""
    if obj.kind == "pin":
        r, L = float(obj.radius), float(obj.length)
        if abs(g[1]) > opening / 2.0 - r:
            return "pin outside the jaw span"
        if g[0] <= 0.0:
            return "fingertips above the pin axis"
        if min(g[2] + 0.011, L) - max(g[2] - 0.011, 0.0) < 0.005:
            return "pads miss the pin"
        return None
    half = np.asarray(obj.extents) / 2.0
    if abs(g[0]) > opening / 2.0 - half[0]:
        return f"{obj.kind} outside the jaw span"
    if not 0.0 < g[2] < obj.height:
        return "fingertips outside the object height"
    if abs(g[1]) > half[1]:
        return "pads miss the object"
    return None


def _object_width(obj: SceneObject) -> float:
    return 2.0 * float(obj.radius) if obj.kind == "pin" else float(obj.extents[0])


def _aligned_grasp(obj_T: np.ndarray, tool_T: np.ndarray, nominal_R: np.ndarray, jaw_axis: int) -> Tuple[np.ndarray, np.ndarray]:
    """Tool pose in the object frame after the jaws close: the object turns
    into the nominal orientation and is centered along the jaw axis."""
    g = (invert_transform(obj_T) @ tool_T)[:3, 3]
    raw = g.copy()
    g[jaw_axis] = 0.0
    return make_transform(nominal_R, g), raw


def grasp_frame(kind: str) -> Tuple[np.ndarray, int]:
    """Nominal tool rotation in the object frame and the object axis the
    jaws close along."""
    if kind == "pin":
        # tool z along pin x (down when lying), tool y along -pin z
        return np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]), 1
    # top grasp across the width: tool z down, tool y along the length
    return np.array([[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]]), 0


def executor_grasp(world: WorldState, inv: PrimitiveInvocation, ctx: SimContext):
    """Close on ``object`` (if still open) and attach it."""
    arm = inv.arm
    name = inv.params.get("object")
    if name not in world.objects:
        raise ExecutorError(f"grasp on absent object {name!r}", "precondition")
    if name in world.attachments:
        raise ExecutorError(f"{name} is already held by {world.attachments[name].arm}", "precondition")
    if world.held_by(arm) is not None:
        raise ExecutorError(f"{arm} already holds {world.held_by(arm)}", "precondition")
    obj = world.objects[name]
    a = world.arms[arm]
    width = _object_width(obj)
    T_tool = world.tool_pose(arm)
    data: Dict[str, Any] = {}
    opening = a.opening if a.closed_from is None else max(a.opening, a.closed_from)
    if a.opening > width + 1e-9:
        # kinematic close with the wrist fixed: the fingertips advance
        ext0 = a.extension
        a = replace(a, opening=width)
        T_tool = T_tool.copy()
        T_tool[:3, 3] += T_tool[:3, 2] * (a.extension - ext0)
        if a.tool_override is not None:
            a = replace(a, tool_override=T_tool)
        world.time += ctx.close_time
    R_nom, jaw = grasp_frame(obj.kind)
    S_true = world.object_pose(name)
    grasp_true, raw = _aligned_grasp(S_true, T_tool, R_nom, jaw)
    why = _pad_check(obj, raw, opening)
    if why is not None:
        raise ExecutorError(f"grasp miss on {name}: {why}", "grasp")
    # fingertips driven into the table without compliance
    tip_pen = ctx.table_height - float(T_tool[2, 3])
    limit = a.model.gripper.tip_force_limit
    if tip_pen > 0 and ctx.tip_stiffness * tip_pen > limit:
        raise ExecutorError(
            f"fingertips pressed {tip_pen * 1e3:.2f} mm into the table "
            f"({ctx.tip_stiffness * tip_pen:.1f} N > {limit} N)", "tip_overload")
    grasp_bel, _ = _aligned_grasp(world.believed_pose(name), T_tool, R_nom, jaw)
    if "grasp_believed" in inv.params:
        grasp_bel = np.asarray(inv.params["grasp_believed"], dtype=float)
    world.arms[arm] = replace(a, closed_from=None)
    world.attachments[name] = Attachment(arm, grasp_true, grasp_bel)
    data["grasp_offset"] = (grasp_true[:3, 3] - grasp_bel[:3, 3]).tolist()
    return world, data


def executor_release(world: WorldState, inv: PrimitiveInvocation, ctx: SimContext):
    arm = inv.arm
    held = world.held_by(arm)
    if held is None:
        raise ExecutorError(f"{arm} has nothing to release", "precondition")
    pose = Pose.from_matrix(world.object_pose(held))
    del world.attachments[held]
    world.objects[held] = world.objects[held].with_pose(pose)
    world.perceived[held] = pose
    a = world.arms[arm]
    T = world.tool_pose(arm)
    world.arms[arm] = replace(a, opening=a.model.gripper.max_opening, closed_from=None,
                              tool_override=T if a.tool_override is not None else None)
    world.time += ctx.close_time
    return world, {"object": held}


# ---------------------------------------------------------------------------
# compliant executors


def _force(inv: PrimitiveInvocation) -> Wrench:
    return Wrench(np.asarray(inv.params["force"], dtype=float), np.zeros(3), frame="world")


class _Settle:
    def __init__(self, f_r: Wrench, ctx: SimContext):
        self.fr = float(np.linalg.norm(f_r.force))
        self.tol = max(ctx.settle_tolerance * self.fr, 0.01)
        self.need = ctx.settle_samples
        self.count = 0

    def update(self, loop: ForceLoop, f_r: Wrench) -> bool:
        fe = float(np.linalg.norm(f_r.force - loop.force.force))
        ok = fe <= self.tol and (self.fr == 0.0 or loop.env.in_contact)
        self.count = self.count + 1 if ok else 0
        return self.count >= self.need


def _finish(world: WorldState, arm: str, contact: TipContact, p: np.ndarray, in_contact: bool, dt_total: float):
    world.arms[arm] = replace(world.arms[arm], tool_override=contact.tool_from_tip(p), contact=in_contact)
    world.time += dt_total


def executor_contact_no_motion(world: WorldState, inv: PrimitiveInvocation, ctx: SimContext):
    """Guarded approach until contact, then hold ``force`` while the
    optional ``gripper`` command (``close`` to ``width``) executes."""
    arm = inv.arm
    sensor = ctx.sensor(arm)
    f_r = _force(inv)
    contact = TipContact(world, arm, ctx)
    env = contact.environment()
    p0 = contact.believed_tip(world.tool_pose(arm))
    a = world.arms[arm]
    elapsed = 0.0
    if not a.contact:
        direction = f_r.force if np.linalg.norm(f_r.force) > 0 else np.array([0.0, 0.0, -1.0])
        try:
            p0, tr = guarded_move(ctx.controller, env, p0, direction, ctx.approach_speed,
                                  ctx.contact_threshold, float(inv.params.get("travel", 0.1)),
                                  on_read=sensor.count)
        except NoContactError as exc:
            raise ExecutorError(f"{arm}: {exc}", "no_contact") from None
        elapsed += len(tr) * ctx.controller.dt
    # the loop runs on the wrist-fixed point; the fingertip extension while
    # the gripper closes is added back through the environment and cancelled
    # by feed-forward on the reference
    ext = {"v": 0.0}
    z_tool = contact.R[:, 2]

    def surface(p):
        return contact.surface(p + z_tool * ext["v"]) - z_tool[2] * ext["v"]

    env = ContactEnvironment(contact.stiffness, surface)
    loop = ForceLoop(ctx.controller, env, p0, on_read=sensor.count)
    settle = _Settle(f_r, ctx)
    for _ in range(int(ctx.timeout / loop.dt)):
        loop.step(p0, f_r)
        if settle.update(loop, f_r):
            break
    else:
        raise ExecutorError(f"{arm}: force did not settle at {f_r.force.tolist()} N", "timeout")
    data: Dict[str, Any] = {"settle_time": loop.time}
    t_hold = loop.time
    g = inv.params.get("gripper")
    if g == "close":
        width = float(inv.params["width"])
        o0 = a.opening
        gs = a.model.gripper
        steps = int(round(ctx.close_time / loop.dt))
        worst = 0.0
        for k in range(1, steps + 1):
            o = o0 + (width - o0) * k / steps
            ext["v"] = gs.height_delta * (o0 - o) / gs.max_opening
            ff = -z_tool * ext["v"] if ctx.gripper_feedforward else np.zeros(3)
            loop.step(p0 + ff, f_r)
            worst = max(worst, float(np.linalg.norm(f_r.force - loop.force.force)))
        data["close_force_error"] = worst
        data["close_in_contact"] = bool(env.in_contact)
        world.arms[arm] = replace(world.arms[arm], opening=width, closed_from=o0)
    elif g is not None:
        raise InvocationError(f"unknown gripper command {g!r}")
    p_tip = loop.position + z_tool * ext["v"]
    data["force"] = loop.force.force.tolist()
    data["hold_time"] = loop.time - t_hold
    _finish(world, arm, contact, p_tip, bool(env.in_contact), elapsed + loop.time)
    return world, data


def executor_force_motion(world: WorldState, inv: PrimitiveInvocation, ctx: SimContext):
    """Advance under force control until the contact force settles at the
    setpoint (default) or ``depth`` metres of travel along ``direction``."""
    arm = inv.arm
    sensor = ctx.sensor(arm)
    f_r = _force(inv)
    contact = TipContact(world, arm, ctx)
    env = contact.environment()
    p0 = contact.believed_tip(world.tool_pose(arm))
    fn = float(np.linalg.norm(f_r.force))
    direction = np.asarray(inv.params.get("direction", f_r.force / fn if fn else (0.0, 0.0, -1.0)), dtype=float)
    direction = direction / np.linalg.norm(direction)
    depth = inv.params.get("depth")
    loop = ForceLoop(ctx.controller, env, p0, constraint=contact.constrain, on_read=sensor.count)
    settle = _Settle(f_r, ctx)
    timeout = float(inv.params.get("timeout", ctx.timeout))
    reason = None
    try:
        for _ in range(int(timeout / loop.dt)):
            loop.step(p0, f_r)
            if depth is not None and float(np.dot(loop.position - p0, direction)) >= float(depth):
                reason = "depth"
                break
            if settle.update(loop, f_r):
                reason = "settled"
                break
    except DivergenceError as exc:
        raise ExecutorError(f"{arm}: {exc}", "no_contact") from None
    if reason is None:
        raise ExecutorError(f"{arm}: force motion did not terminate within {timeout} s", "timeout")
    travel = float(np.dot(loop.position - p0, direction))
    data = {"termination": reason, "travel": travel, "force": loop.force.force.tolist(),
            "captured": contact.captured_by is not None}
    _finish(world, arm, contact, loop.position, bool(env.in_contact), loop.time)
    return world, data


def executor_slide_explore(world: WorldState, inv: PrimitiveInvocation, ctx: SimContext):
    """Contact, then slide along ``direction`` keeping ``force`` until the
    ``detector`` (``edge`` or ``hole``) fires within ``travel``.

    The reported feature is in believed coordinates: for an edge, the point
    where contact was lost minus the tip radius along the slide; for a hole,
    the tip position where it dropped in.
    """
    arm = inv.arm
    sensor = ctx.sensor(arm)
    f_r = _force(inv)
    detector = inv.params.get("detector", "edge")
    if detector not in ("edge", "hole"):
        raise InvocationError(f"unknown detector {detector!r}")
    u = np.asarray(inv.params["direction"], dtype=float)
    u = np.array([u[0], u[1], 0.0])
    u /= np.linalg.norm(u)
    travel = float(inv.params.get("travel", 0.05))
    step = float(inv.params.get("step", ctx.slide_step))
    contact = TipContact(world, arm, ctx)
    env = contact.environment()
    p = contact.believed_tip(world.tool_pose(arm))
    loop = ForceLoop(ctx.controller, env, p, constraint=contact.constrain, on_read=sensor.count)
    # contact phase
    settle = _Settle(f_r, ctx)
    for _ in range(int(ctx.timeout / loop.dt)):
        loop.step(p, f_r)
        if settle.update(loop, f_r):
            break
    else:
        raise ExecutorError(f"{arm}: no contact before sliding", "no_contact")
    z_ref = float(loop.position[2])
    x_r = p.copy()
    lost_at = None  # believed position at the latest loss of contact
    was_in = True
    run = 0
    feature = None
    n = int(math.ceil(travel / step))
    # after the last slide step keep servoing long enough to see a drop
    fall = ctx.controller.kp[2] * max(float(np.linalg.norm(f_r.force)), 1e-9)
    extra = int(math.ceil(2.0 * max(ctx.edge_drop, ctx.hole_drop) / fall)) + ctx.edge_samples
    for k in range(n + extra):
        if k < n:
            x_r = x_r + u * step
        loop.step(x_r, f_r)
        inside = env.in_contact
        if was_in and not inside:
            lost_at = loop.position.copy()
        was_in = inside
        drop = z_ref - float(loop.position[2])
        if detector == "edge":
            run = run + 1 if drop > ctx.edge_drop else 0
            if run >= ctx.edge_samples and lost_at is not None:
                feature = lost_at[:2] - contact.radius * u[:2]
                break
        elif drop > ctx.hole_drop:
            feature = (lost_at if lost_at is not None else loop.position)[:2].copy()
            break
        if k >= n and inside:
            break
    if feature is None:
        raise ExecutorError(f"{arm}: {detector} not found within {travel * 1e3:.1f} mm", "feature")
    data = {"feature": feature.tolist(), "detector": detector, "surface_z": z_ref,
            "captured": contact.captured_by is not None, "slide": float(np.dot(loop.position - p, u))}
    if detector == "hole" and contact.captured_by is not None:
        c, _ = contact.captured_by
        data["lateral_error"] = float(np.hypot(*(loop.position[:2] + contact.delta[:2] - c[:2])))
    _finish(world, arm, contact, loop.position, bool(env.in_contact), loop.time)
    return world, data


EXECUTORS: Dict[str, Callable] = {
    "approach": executor_approach,
    "release": executor_release,
    "grasp": executor_grasp,
    "transport": executor_transport,
    "contact_no_motion": executor_contact_no_motion,
    "force_motion": executor_force_motion,
    "slide_explore": executor_slide_explore,
}


def execute_primitive(world: WorldState, inv: PrimitiveInvocation, ctx: SimContext):
    """Validate, dispatch and log one primitive.

    Returns ``(world, log)``; the input world is left untouched. Failures
    raise :class:`PrimitiveFailure` holding the failed log entry.
    """
    spec = ctx.registry[inv.primitive_id]
    if inv.arm not in world.arms:
        raise InvocationError(f"unknown arm {inv.arm!r}")
    validate_invocation(spec, inv, world.arms[inv.arm].model)
    if spec.executor is None:
        raise InvocationError(f"primitive {spec.id} ({spec.name}) has no executor in this build")
    w = world.copy()
    start = w.time
    action = inv.action or spec.name
    try:
        w, data = EXECUTORS[spec.executor](w, inv, ctx)
    except (ExecutorError, DivergenceError) as exc:
        log = PrimitiveLog(start, w.time, spec.id, action, f"failed: {exc}", inv.arm,
                           {"reason": getattr(exc, "reason", "executor")})
        raise PrimitiveFailure(log, exc) from exc
    w.check_invariants()
    return w, PrimitiveLog(start, w.time, spec.id, action, "ok", inv.arm, data)
