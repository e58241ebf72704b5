"""Bimanual pin insertion: scenario, sub-tasks, full run and Monte Carlo.

The left arm picks a pin lying on the table with a compliant grasp, the
right arm carries a stick with a hole to the insertion area, and the left
arm explores the stick with the pin (two edges, then the hole along the
middle axis) before inserting it under force control.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .force_control import ForceControllerState
from .model import (
    ConfigError,
    Hole,
    ManipulatorModel,
    NoiseModel,
    Pose,
    SceneObject,
    data_path,
    load_model,
    make_transform,
    noise_from_dict,
    perturb_pose,
    quantity,
    read_config,
)
from .planner import RRTParams
from .primitives import (
    ArmState,
    PrimitiveFailure,
    PrimitiveInvocation,
    PrimitiveLog,
    SimContext,
    TipContact,
    WorldState,
    execute_primitive,
    grasp_frame,
    load_registry,
    default_registry,
)
from .workspace import DomainError

HOME_Q = np.array([0.0, 0.05, 0.3, 0.0, 1.2, 0.0])
TABLE_SEQUENCE = {
    "left": [2, 5, 5, 9, 11, 10, 14, 16, 11, 16, 11, 16, 14, 3],
    "right": [2, 9, 11],
}


def precision_index(d_hole: float, d_peg: float) -> float:
    """Peg-in-hole difficulty ``log2(d_H / (d_H - d_P))`` in bits."""
    if not (d_hole > 0 and d_peg >= 0):
        raise DomainError("diameters must satisfy d_H > 0 and d_P >= 0")
    if d_peg >= d_hole:
        raise DomainError(f"peg diameter {d_peg} must be smaller than hole diameter {d_hole}")
    return math.log2(d_hole / (d_hole - d_peg))


def _rz(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class Scenario:
    """Everything needed to reproduce one task run (lengths in metres)."""

    model: ManipulatorModel
    base_distance: float = 1.0
    table_height: float = 0.0
    pin_xy: Tuple[float, float] = (-0.2, 0.25)
    pin_yaw: float = math.pi / 2  # direction of the pin axis on the table
    pin_diameter: float = 0.008
    pin_length: float = 0.030
    pin_grasp_shift: float = 0.008  # grasp point beyond the pin middle, away from the inserted end
    stick_xy: Tuple[float, float] = (0.2, 0.25)
    stick_yaw: float = 0.0
    stick_extents: Tuple[float, float, float] = (0.05, 0.27, 0.02)
    stick_grasp_offset: float = -0.05  # along the stick length
    stick_grasp_depth: float = 0.012  # fingertips below the top face
    hole_position: Tuple[float, float] = (0.0, 0.06)  # on the top face, stick frame
    hole_diameter: float = 0.0081
    hole_depth: float = 0.010
    chamfer: float = 0.00045
    insertion_xyz: Tuple[float, float, float] = (0.03, 0.0, 0.15)
    insertion_yaw: float = math.pi / 2
    noise: NoiseModel = field(default_factory=NoiseModel)
    kp: float = 5e-6
    kv: float = 2e-10
    cutoff_hz: float = 10.0
    dt: float = 1e-3
    tip_stiffness: float = 1e4
    wood_stiffness: float = 1e5
    grasp_force: float = 5.0
    contact_force: float = 5.0
    explore_force: float = 5.0
    insert_force: float = 10.0
    exploration: bool = True
    probe_offset: float = 0.02  # edge probes this far beyond the hole along the stick
    hole_backoff: float = 0.008
    hover: float = 0.006
    pregrasp: float = 0.05
    slide_step: float = 1e-4
    edge_travel: float = 0.05
    lateral_offset: float = 0.0  # deliberate aiming error without exploration
    compliant_grasp: bool = True
    plan: bool = True
    plan_budget: int = 5000
    seed: int = 0
    registry_path: Optional[str] = None

    def __post_init__(self):
        if not (self.hole_diameter > self.pin_diameter > 0):
            raise ConfigError("scenario needs hole diameter > pin diameter > 0")
        if self.base_distance <= 0:
            raise ConfigError("base distance must be positive")

    @property
    def radial_clearance(self) -> float:
        return 0.5 * (self.hole_diameter - self.pin_diameter)

    @property
    def capture_radius(self) -> float:
        return self.radial_clearance + self.chamfer

    def controller(self) -> ForceControllerState:
        return ForceControllerState(kp=self.kp, kv=self.kv, dt=self.dt, cutoff_hz=self.cutoff_hz)

    def context(self, seed: Optional[int] = None) -> SimContext:
        reg = load_registry(self.registry_path) if self.registry_path else default_registry()
        return SimContext(
            controller=self.controller(), registry=reg, tip_stiffness=self.tip_stiffness,
            contact_stiffness=self.wood_stiffness, table_height=self.table_height,
            slide_step=self.slide_step, plan=self.plan,
            rrt=RRTParams(budget=self.plan_budget), seed=self.seed if seed is None else seed,
        )

    def with_noise_mm(self, mm: float) -> "Scenario":
        """Position bound ``mm`` with the orientation bound scaled at the
        tracker's 3 mm : 0.05 rad ratio."""
        return replace(self, noise=replace(self.noise, position_bound=mm * 1e-3,
                                           orientation_bound=0.05 * mm / 3.0))

    # -- geometry -----------------------------------------------------

    def pin_object(self) -> SceneObject:
        r = self.pin_diameter / 2.0
        axis = np.array([math.cos(self.pin_yaw), math.sin(self.pin_yaw), 0.0])
        center = np.array([self.pin_xy[0], self.pin_xy[1], self.table_height + r])
        R = _rz(self.pin_yaw) @ _ry(math.pi / 2)
        pose = Pose.from_matrix(make_transform(R, center - axis * self.pin_length / 2.0))
        return SceneObject("pin", "pin", pose, radius=r, length=self.pin_length)

    def stick_object(self) -> SceneObject:
        hole = Hole([self.hole_position[0], self.hole_position[1], self.stick_extents[2]],
                    self.hole_diameter, self.hole_depth, self.chamfer)
        pose = Pose.from_matrix(make_transform(_rz(self.stick_yaw),
                                               [self.stick_xy[0], self.stick_xy[1], self.table_height]))
        return SceneObject("stick", "stick", pose, extents=np.array(self.stick_extents), holes=(hole,))

    def insertion_pose(self) -> np.ndarray:
        return make_transform(_rz(self.insertion_yaw), self.insertion_xyz)

    def arm_models(self) -> Dict[str, ManipulatorModel]:
        h = self.base_distance / 2.0
        left = make_transform(np.eye(3), [-h, 0.0, self.table_height])
        right = make_transform(_rz(math.pi), [h, 0.0, self.table_height])
        return {"left": self.model.with_base(left), "right": self.model.with_base(right)}

    def pin_grasp(self) -> np.ndarray:
        """Nominal tool pose in the pin frame (fingertips on the table)."""
        R, _ = grasp_frame("pin")
        r = self.pin_diameter / 2.0
        return make_transform(R, [r, 0.0, self.pin_length / 2.0 + self.pin_grasp_shift])

    def stick_grasp(self) -> np.ndarray:
        R, _ = grasp_frame("stick")
        return make_transform(R, [0.0, self.stick_grasp_offset, self.stick_extents[2] - self.stick_grasp_depth])


def _flat(T: np.ndarray, kind: str) -> np.ndarray:
    """Perceived pose reduced to what a flat-lying object can be: keep the
    position and the heading, drop tilt."""
    if kind == "pin":
        z = T[:3, 2]
        yaw = math.atan2(z[1], z[0])
        return make_transform(_rz(yaw) @ _ry(math.pi / 2), T[:3, 3])
    x = T[:3, 0]
    return make_transform(_rz(math.atan2(x[1], x[0])), T[:3, 3])


def initial_world(scn: Scenario, seed: int) -> WorldState:
    rng = np.random.default_rng(seed)
    models = scn.arm_models()
    arms = {k: ArmState(k, m, HOME_Q.copy(), m.gripper.max_opening) for k, m in models.items()}
    pin, stick = scn.pin_object(), scn.stick_object()
    objects = {"pin": pin, "stick": stick}
    perceived = {
        "pin": Pose.from_matrix(_flat(perturb_pose(pin.pose, scn.noise, rng).matrix(), "pin")),
        "stick": Pose.from_matrix(_flat(perturb_pose(stick.pose, scn.noise, rng).matrix(), "stick")),
    }
    return WorldState(arms, objects, perceived)


# ---------------------------------------------------------------------------
# sub-tasks


class StageFailure(RuntimeError):
    def __init__(self, stage: str, reason: str, world: WorldState, logs: List[PrimitiveLog]):
        self.stage = stage
        self.reason = reason
        self.world = world
        self.logs = logs
        super().__init__(f"{stage}: {reason}")


class _Runner:
    def __init__(self, world: WorldState, ctx: SimContext, stage: str):
        self.world = world
        self.ctx = ctx
        self.stage = stage
        self.logs: List[PrimitiveLog] = []

    def __call__(self, pid: int, arm: str, action: str, **params) -> PrimitiveLog:
        inv = PrimitiveInvocation(pid, arm, params, action)
        try:
            self.world, log = execute_primitive(self.world, inv, self.ctx)
        except PrimitiveFailure as exc:
            self.logs.append(exc.log)
            self.world.time = exc.log.end_s
            raise StageFailure(self.stage, str(exc.cause), self.world, self.logs) from exc
        self.logs.append(log)
        return log

    def fail(self, reason: str):
        raise StageFailure(self.stage, reason, self.world, self.logs)


def run_compliant_grasp(world: WorldState, scn: Scenario, ctx: Optional[SimContext] = None):
    """Left arm picks the pin. Returns ``(world, logs)``."""
    ctx = ctx or scn.context()
    run = _Runner(world, ctx, "grasp")
    P = world.perceived["pin"].matrix()
    G = scn.pin_grasp()
    T_grasp = P @ G
    T_grasp[2, 3] = P[2, 3] - scn.pin_diameter / 2.0  # perceived table height
    gs = world.arms["left"].model.gripper
    if scn.compliant_grasp:
        pre = T_grasp.copy()
        pre[2, 3] += scn.pregrasp
        run(2, "left", "approach to the pregrasp position", target=pre, opening=gs.max_opening)
        run(5, "left", "move down until contact", force=[0.0, 0.0, -scn.grasp_force])
        log = run(5, "left", "close the gripper keeping contact", force=[0.0, 0.0, -scn.grasp_force],
                  gripper="close", width=scn.pin_diameter)
        # the held force says how far the soft fingertips sit below the
        # table surface, so the pin axis is that much higher in the tool
        G = G.copy()
        G[0, 3] += abs(log.data["force"][2]) / scn.tip_stiffness
    else:
        # position the open fingertips so that closing lands them on the
        # perceived table
        ext = gs.height_delta * (1.0 - scn.pin_diameter / gs.max_opening)
        T = T_grasp.copy()
        T[2, 3] += ext
        run(2, "left", "approach to the grasp position", target=T, opening=gs.max_opening)
    run(9, "left", "grasp the pin", object="pin", grasp_believed=G)
    run(11, "left", "pick up the pin", lift=0.1)
    return run.world, run.logs


def run_pick_and_place(world: WorldState, scn: Scenario, ctx: Optional[SimContext] = None):
    """Right arm carries the stick to the insertion pose."""
    ctx = ctx or scn.context()
    run = _Runner(world, ctx, "pick_and_place")
    S = world.perceived["stick"].matrix()
    G = scn.stick_grasp()
    gs = world.arms["right"].model.gripper
    # open fingertips stop short by the closing extension so that the
    # closed tips sit at the planned depth
    ext = gs.height_delta * (1.0 - scn.stick_extents[0] / gs.max_opening)
    T = S @ G
    T[:3, 3] -= T[:3, 2] * ext
    run(2, "right", "approach to the stick", target=T, opening=gs.max_opening)
    run(9, "right", "grasp the stick", object="stick", grasp_believed=G)
    run(11, "right", "move the stick to the insertion area", object_target=scn.insertion_pose())
    return run.world, run.logs


@dataclass
class InsertionResult:
    success: bool
    edges: List[List[float]] = field(default_factory=list)
    hole_estimate: Optional[List[float]] = None
    hole_estimate_error: Optional[float] = None  # m, true lateral error of the estimate
    lateral_error: Optional[float] = None  # m, pin axis to hole axis at the end
    depth: float = 0.0  # m, pin tip below the top face
    width_error: Optional[float] = None


def _pin_pose_upright(P: np.ndarray, toward: np.ndarray) -> np.ndarray:
    d = np.array([toward[0], toward[1], 0.0])
    d /= np.linalg.norm(d)
    z = np.array([0.0, 0.0, 1.0])
    return make_transform(np.column_stack([d, np.cross(z, d), z]), P)


def run_compliant_insertion(world: WorldState, scn: Scenario, ctx: Optional[SimContext] = None):
    """Left arm explores the held stick and inserts the pin.

    Returns ``(world, logs, result)``; insertion stalls (pin resting on the
    surface instead of entering the hole) raise a stage failure.
    """
    ctx = ctx or scn.context()
    run = _Runner(world, ctx, "exploration" if scn.exploration else "insertion")
    S = world.believed_pose("stick")
    stick = world.objects["stick"]
    hole = stick.holes[0]
    c = S[:3, :3] @ hole.position + S[:3, 3]  # believed hole center on the top face
    u, v = S[:3, 0], S[:3, 1]
    base = world.arms["left"].model.base_pose[:3, 3]
    toward = c - base
    G = world.attachments["pin"].grasp_believed
    res = InsertionResult(False)

    def tool_at(P):
        return _pin_pose_upright(P, toward) @ G

    def above(P):
        return tool_at(P + np.array([0.0, 0.0, scn.hover]))

    f_explore = [0.0, 0.0, -scn.explore_force]
    if scn.exploration:
        P1 = c + v * scn.probe_offset
        run(10, "left", "move the pin above the stick", target=above(P1))
        run(14, "left", "contact the stick", force=f_explore)
        e1 = run(16, "left", "detect the first edge", force=f_explore, direction=u,
                 detector="edge", travel=scn.edge_travel).data["feature"]
        run(11, "left", "move above and contact the stick", target=above(P1), lift=scn.hover, planned=False)
        e2 = run(16, "left", "detect the second edge", force=f_explore, direction=-u,
                 detector="edge", travel=scn.edge_travel).data["feature"]
        e1, e2 = np.array(e1), np.array(e2)
        res.edges = [e1.tolist(), e2.tolist()]
        res.width_error = float(abs(np.dot(e1 - e2, u[:2])) - stick.extents[0])
        lateral = float(np.dot(0.5 * (e1 + e2) - c[:2], u[:2]))
        P2 = c + u * lateral - v * scn.hole_backoff
        run(11, "left", "move above the stick middle axis", target=above(P2), lift=scn.hover, planned=False)
        log = run(16, "left", "find the hole", force=f_explore, direction=v, detector="hole",
                  travel=2.0 * scn.hole_backoff)
        along = float(np.dot(np.array(log.data["feature"]) - c[:2], v[:2]))
        est = c + u * lateral + v * along
        res.hole_estimate = est.tolist()
        run.stage = "insertion"
        run(14, "left", "insert the pin", force=[0.0, 0.0, -scn.insert_force])
    else:
        target = c + u * scn.lateral_offset
        run(10, "left", "move the pin above the hole", target=above(target))
        run(14, "left", "contact the stick", force=f_explore)
        run(14, "left", "insert the pin", force=[0.0, 0.0, -scn.insert_force])
        res.hole_estimate = target.tolist()
    w = run.world
    tip = TipContact(w, "left", ctx)
    true_tip = w.object_pose("pin")[:3, 3]
    S_true = w.object_pose("stick")
    c_true = S_true[:3, :3] @ hole.position + S_true[:3, 3]
    res.lateral_error = float(np.hypot(*(true_tip[:2] - c_true[:2])))
    res.depth = float(c_true[2] - true_tip[2])
    est_true = np.array(res.hole_estimate[:2]) + tip.delta[:2]
    res.hole_estimate_error = float(np.hypot(*(est_true - c_true[:2])))
    need = min(hole.depth, tip.protrusion) - 0.5e-3
    if res.depth < need:
        run.fail(f"insertion stalled {res.depth * 1e3:.2f} mm below the surface "
                 f"(lateral error {res.lateral_error * 1e3:.3f} mm)")
    run(3, "left", "release the pin")
    res.success = True
    return run.world, run.logs, res


# ---------------------------------------------------------------------------
# full task


@dataclass
class TaskReport:
    outcome: str  # "success" or "failure"
    stage: Optional[str]
    reason: str
    seed: int
    timeline: List[PrimitiveLog]
    duration: float
    pin_error_mm: Optional[float] = None
    hole_estimate: Optional[List[float]] = None
    hole_estimate_error_mm: Optional[float] = None
    edges: List[List[float]] = field(default_factory=list)
    insertion_depth_mm: Optional[float] = None

    @property
    def success(self) -> bool:
        return self.outcome == "success"

    def sequence(self, arm: str) -> List[int]:
        return [e.primitive_id for e in self.timeline if e.arm == arm]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "outcome": self.outcome,
            "stage": self.stage,
            "reason": self.reason,
            "seed": self.seed,
            "duration_s": round(self.duration, 6),
            "pin_error_mm": self.pin_error_mm,
            "hole_estimate": self.hole_estimate,
            "hole_estimate_error_mm": self.hole_estimate_error_mm,
            "edges": self.edges,
            "insertion_depth_mm": self.insertion_depth_mm,
            "timeline": [e.to_dict() for e in self.timeline],
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def write_timeline_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["start_s", "end_s", "arm", "primitive", "action", "outcome"])
            for e in self.timeline:
                w.writerow([f"{e.start_s:.3f}", f"{e.end_s:.3f}", e.arm, e.primitive_id, e.action, e.outcome])


def run_full_task(scn: Scenario, seed: Optional[int] = None) -> TaskReport:
    """Grasp, pick-and-place and insertion in sequence for one seed."""
    seed = scn.seed if seed is None else int(seed)
    ctx = scn.context(seed)
    world = initial_world(scn, seed)
    logs: List[PrimitiveLog] = []
    res: Optional[InsertionResult] = None
    try:
        world, lg = run_compliant_grasp(world, scn, ctx)
        logs += lg
        world, lg = run_pick_and_place(world, scn, ctx)
        logs += lg
        world, lg, res = run_compliant_insertion(world, scn, ctx)
        logs += lg
    except StageFailure as exc:
        logs += exc.logs
        return TaskReport("failure", exc.stage, exc.reason, seed, logs, exc.world.time)
    return TaskReport(
        "success", None, "", seed, logs, world.time,
        pin_error_mm=res.lateral_error * 1e3,
        hole_estimate=res.hole_estimate,
        hole_estimate_error_mm=res.hole_estimate_error * 1e3,
        edges=res.edges,
        insertion_depth_mm=res.depth * 1e3,
    )


def run_seeds(seed: int, n_runs: int) -> List[int]:
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1)[0]) for s in ss.spawn(n_runs)]


def _run_one(args) -> TaskReport:
    scn, s = args
    return run_full_task(scn, s)


def evaluate_monte_carlo(scn: Scenario, n_runs: int, seed: int = 0, jobs: int = 1,
                         keep_reports: bool = False) -> Dict[str, Any]:
    """Success rate, failure-stage histogram and hole-estimate error
    statistics over ``n_runs`` seeded runs. ``n_runs = 1`` runs with
    ``seed`` itself; the result does not depend on ``jobs``."""
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    seeds = [seed] if n_runs == 1 else run_seeds(seed, n_runs)
    work = [(scn, s) for s in seeds]
    if jobs > 1 and n_runs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_one, work))
    else:
        reports = [_run_one(w) for w in work]
    hist: Dict[str, int] = {}
    for r in reports:
        if not r.success:
            hist[r.stage] = hist.get(r.stage, 0) + 1
    errs = np.array([r.hole_estimate_error_mm for r in reports if r.hole_estimate_error_mm is not None])
    stats: Dict[str, Any] = {
        "n_runs": n_runs,
        "seed": seed,
        "successes": sum(r.success for r in reports),
        "success_rate": sum(r.success for r in reports) / n_runs,
        "failures": dict(sorted(hist.items())),
        "hole_estimate_error_mm": {
            "mean": float(errs.mean()) if errs.size else None,
            "p95": float(np.percentile(errs, 95)) if errs.size else None,
            "max": float(errs.max()) if errs.size else None,
        },
        "noise": {"position_bound_m": scn.noise.position_bound, "orientation_bound_rad": scn.noise.orientation_bound},
    }
    if keep_reports:
        stats["reports"] = reports
    return stats


# ---------------------------------------------------------------------------
# scenario files


def _len(d, key, default, ctx):
    return quantity(d[key], "length", f"{ctx}.{key}") if key in d else default


def _ang(d, key, default, ctx):
    return quantity(d[key], "angle", f"{ctx}.{key}") if key in d else default


def _force_q(d, key, default, ctx):
    return quantity(d[key], "force", f"{ctx}.{key}") if key in d else default


def scenario_from_dict(data: Dict[str, Any], ctx: str = "scenario", base_dir: Optional[Path] = None) -> Scenario:
    """Build a :class:`Scenario`; every field is optional and unit-tagged."""
    base_dir = base_dir or Path(".")
    robot = data.get("robot", "vs060.json")
    path = Path(robot)
    if not path.is_absolute():
        path = base_dir / path if (base_dir / path).exists() else data_path(robot)
    kw: Dict[str, Any] = {"model": load_model(path)}
    kw["base_distance"] = _len(data, "base_distance", 1.0, ctx)
    kw["table_height"] = _len(data, "table_height", 0.0, ctx)
    pin = data.get("pin", {})
    if "position" in pin:
        kw["pin_xy"] = tuple(quantity(pin["position"], "length", f"{ctx}.pin.position")[:2])
    kw["pin_yaw"] = _ang(pin, "yaw", math.pi / 2, f"{ctx}.pin")
    kw["pin_diameter"] = _len(pin, "diameter", 0.008, f"{ctx}.pin")
    kw["pin_length"] = _len(pin, "length", 0.030, f"{ctx}.pin")
    kw["pin_grasp_shift"] = _len(pin, "grasp_shift", 0.008, f"{ctx}.pin")
    st = data.get("stick", {})
    if "position" in st:
        kw["stick_xy"] = tuple(quantity(st["position"], "length", f"{ctx}.stick.position")[:2])
    kw["stick_yaw"] = _ang(st, "yaw", 0.0, f"{ctx}.stick")
    if "extents" in st:
        kw["stick_extents"] = tuple(quantity(st["extents"], "length", f"{ctx}.stick.extents"))
    kw["stick_grasp_offset"] = _len(st, "grasp_offset", -0.05, f"{ctx}.stick")
    kw["stick_grasp_depth"] = _len(st, "grasp_depth", 0.012, f"{ctx}.stick")
    hole = st.get("hole", {})
    if "position" in hole:
        kw["hole_position"] = tuple(quantity(hole["position"], "length", f"{ctx}.stick.hole.position")[:2])
    kw["hole_diameter"] = _len(hole, "diameter", 0.0081, f"{ctx}.stick.hole")
    kw["hole_depth"] = _len(hole, "depth", 0.010, f"{ctx}.stick.hole")
    kw["chamfer"] = _len(hole, "chamfer", 0.00045, f"{ctx}.stick.hole")
    ins = data.get("insertion", {})
    if "position" in ins:
        kw["insertion_xyz"] = tuple(quantity(ins["position"], "length", f"{ctx}.insertion.position"))
    kw["insertion_yaw"] = _ang(ins, "yaw", math.pi / 2, f"{ctx}.insertion")
    if "noise" in data:
        kw["noise"] = noise_from_dict(data["noise"], f"{ctx}.noise")
    c = data.get("controller", {})
    if "kp" in c:
        kw["kp"] = quantity(c["kp"], "compliance", f"{ctx}.controller.kp")
    if "kv" in c:
        kw["kv"] = quantity(c["kv"], "damping_compliance", f"{ctx}.controller.kv")
    if "cutoff" in c:
        kw["cutoff_hz"] = quantity(c["cutoff"], "frequency", f"{ctx}.controller.cutoff")
    if "dt" in c:
        kw["dt"] = quantity(c["dt"], "time", f"{ctx}.controller.dt")
    k = data.get("stiffness", {})
    if "fingertip" in k:
        kw["tip_stiffness"] = quantity(k["fingertip"], "stiffness", f"{ctx}.stiffness.fingertip")
    if "wood" in k:
        kw["wood_stiffness"] = quantity(k["wood"], "stiffness", f"{ctx}.stiffness.wood")
    f = data.get("forces", {})
    for key, attr in (("grasp", "grasp_force"), ("contact", "contact_force"),
                      ("explore", "explore_force"), ("insert", "insert_force")):
        if key in f:
            kw[attr] = _force_q(f, key, None, f"{ctx}.forces")
    ex = data.get("exploration", {})
    kw["exploration"] = bool(ex.get("enabled", True))
    for key in ("probe_offset", "hole_backoff", "hover", "slide_step", "edge_travel"):
        if key in ex:
            kw[key] = _len(ex, key, None, f"{ctx}.exploration")
    if "offset" in ex:
        kw["lateral_offset"] = _len(ex, "offset", 0.0, f"{ctx}.exploration")
    kw["compliant_grasp"] = bool(data.get("compliant_grasp", True))
    pl = data.get("planning", {})
    kw["plan"] = bool(pl.get("enabled", True))
    kw["plan_budget"] = int(pl.get("budget", 5000))
    kw["seed"] = int(data.get("seed", 0))
    if "registry" in data:
        reg = Path(data["registry"])
        kw["registry_path"] = str(reg if reg.is_absolute() else base_dir / reg)
    try:
        return Scenario(**kw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise ConfigError(f"{ctx}: {exc}") from None
        raise ConfigError(f"{ctx}: {exc}") from None


def load_scenario(path=None) -> Scenario:
    """Scenario from a JSON/TOML file (the packaged default if ``None``)."""
    path = Path(path) if path is not None else data_path("scenario.json")
    return scenario_from_dict(read_config(path), ctx=str(path), base_dir=path.parent)


def reference_scenario() -> Scenario:
    return load_scenario(None)
