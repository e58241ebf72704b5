"""Joint-space planning: capsule collision model, bidirectional RRT with
certified edge checks, shortcut smoothing and prioritized two-arm planning."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .kinematics import _chain, _tool_transform
from .model import ManipulatorModel, SceneObject

EDGE_RESOLUTION = 0.02
EXTEND_STEP = 0.1
GOAL_BIAS = 0.1
BUDGET = 50_000
SHORTCUTS = 200
MIN_CERT_STEP = 1e-4


class PlanningError(RuntimeError):
    def __init__(self, message: str, arm: Optional[str] = None, blocker: Optional[str] = None):
        self.arm = arm
        self.blocker = blocker
        super().__init__(message)


@dataclass(frozen=True)
class Box:
    name: str
    transform: np.ndarray  # box center pose
    half: np.ndarray
    kind: str = "obstacle"


def box_from_object(obj: SceneObject) -> Box:
    """Oriented bounding box of a scene object (cylinders get their box)."""
    T = obj.pose.matrix()
    if obj.extents is not None:
        half = np.asarray(obj.extents) / 2.0
    else:
        half = np.array([obj.radius, obj.radius, obj.length / 2.0])
    center = T.copy()
    center[:3, 3] = T[:3, 3] + T[:3, 2] * half[2]
    return Box(obj.name, center, half, obj.kind)


def table_box(name: str = "table", top: float = 0.0, size: float = 4.0, thickness: float = 0.05) -> Box:
    T = np.eye(4)
    T[2, 3] = top - thickness / 2.0
    return Box(name, T, np.array([size / 2, size / 2, thickness / 2]), "table")


def capsule_points(model: ManipulatorModel, q) -> np.ndarray:
    """Capsule axis end points ``(..., n+1, 2, 3)``: base to joint 1, joint k
    to joint k+1, last joint to the tool center point."""
    Rs, ps = _chain(model, q)
    tool = _tool_transform(model, "tcp")
    tcp = ps[..., -1, :] + np.einsum("...ij,j->...i", Rs[..., -1, :, :], tool[:3, 3])
    pts = np.concatenate([ps, tcp[..., None, :]], axis=-2)  # base, J1..Jn, tcp
    return np.stack([pts[..., :-1, :], pts[..., 1:, :]], axis=-2)


def segment_distance(p0, p1, q0, q1) -> np.ndarray:
    """Closest distance between segments ``p0p1`` and ``q0q1`` (batched)."""
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = np.einsum("...i,...i", d1, d1)
    e = np.einsum("...i,...i", d2, d2)
    f = np.einsum("...i,...i", d2, r)
    c = np.einsum("...i,...i", d1, r)
    b = np.einsum("...i,...i", d1, d2)
    eps = 1e-12
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > eps, np.clip((b * f - c * e) / np.where(denom > eps, denom, 1.0), 0.0, 1.0), 0.0)
        t = np.where(e > eps, (b * s + f) / np.where(e > eps, e, 1.0), 0.0)
        s = np.where(t < 0.0, np.where(a > eps, np.clip(-c / np.where(a > eps, a, 1.0), 0.0, 1.0), 0.0), s)
        s = np.where(t > 1.0, np.where(a > eps, np.clip((b - c) / np.where(a > eps, a, 1.0), 0.0, 1.0), 0.0), s)
    t = np.clip(t, 0.0, 1.0)
    c1 = p0 + d1 * s[..., None]
    c2 = q0 + d2 * t[..., None]
    return np.linalg.norm(c1 - c2, axis=-1)


def _box_signed(p_local: np.ndarray, half: np.ndarray) -> np.ndarray:
    d = np.abs(p_local) - half
    m = np.maximum(d, 0.0)
    outside = np.sqrt(np.sum(m * m, axis=-1))
    inside = np.minimum(np.max(d, axis=-1), 0.0)
    return outside + inside


def segment_box_distance(p0, p1, box: Box, iters: int = 24) -> np.ndarray:
    """Signed distance from segments to an oriented box (golden section on
    the segment parameter; the signed distance is convex along a line)."""
    R = box.transform[:3, :3]
    c = box.transform[:3, 3]
    a = (p0 - c) @ R
    b = (p1 - c) @ R
    lo = np.zeros(a.shape[:-1])
    hi = np.ones(a.shape[:-1])
    g = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - g * (hi - lo)
    x2 = lo + g * (hi - lo)

    def f(t):
        return _box_signed(a + (b - a) * t[..., None], box.half)

    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        left = f1 < f2  # minimum lies in [lo, x2]
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        new = np.where(left, hi - g * (hi - lo), lo + g * (hi - lo))
        fn = f(new)
        x1, x2 = np.where(left, new, x2), np.where(left, x1, new)
        f1, f2 = np.where(left, fn, f2), np.where(left, f1, fn)
    ends = np.minimum(f(np.zeros_like(lo)), f(np.ones_like(lo)))
    return np.minimum(np.minimum(f1, f2), ends)


@dataclass
class FrozenArm:
    name: str
    segments: np.ndarray  # (K, 2, 3)
    radii: np.ndarray


def frozen_arm(name: str, model: ManipulatorModel, q) -> FrozenArm:
    return FrozenArm(name, capsule_points(model, np.asarray(q, dtype=float)), np.asarray(model.link_radii))


@dataclass
class CollisionScene:
    """Geometry seen by one planning arm.

    Self pairs closer than ``self_gap`` links in the chain are skipped, as
    is the base capsule against table boxes (the robot stands on it).
    """

    model: ManipulatorModel
    boxes: List[Box] = field(default_factory=list)
    frozen: List[FrozenArm] = field(default_factory=list)
    self_gap: int = 3

    def __post_init__(self):
        K = self.model.n + 1
        self.radii = np.asarray(self.model.link_radii, dtype=float)
        self.self_pairs = np.array([(i, j) for i in range(K) for j in range(i + self.self_gap, K)], dtype=int).reshape(-1, 2)
        # bound on how far any capsule point moves per radian of each joint:
        # downstream link lengths plus the largest radius
        links = [float(np.linalg.norm(j.origin[:3, 3])) for j in self.model.joints]
        tool = float(np.linalg.norm(_tool_transform(self.model, "tcp")[:3, 3]))
        self.lever = np.array([sum(links[j + 1:]) + tool for j in range(self.model.n)]) + float(self.radii.max())
        for b in self.boxes:
            if not (np.all(np.isfinite(b.transform)) and np.all(np.isfinite(b.half))):
                raise ValueError(f"non-finite geometry in {b.name}")

    def _pair_clearances(self, q: np.ndarray):
        """Clearance per body for a batch ``(M, n)``: returns ``(values, names)``."""
        segs = capsule_points(self.model, q)  # (M, K, 2, 3)
        p0, p1 = segs[..., 0, :], segs[..., 1, :]
        cols, names = [], []
        for b in self.boxes:
            d = segment_box_distance(p0, p1, b) - self.radii
            if b.kind == "table":
                d[..., 0] = np.inf
            cols.append(d.min(axis=-1))
            names.append(b.name)
        for fa in self.frozen:
            d = segment_distance(p0[..., :, None, :], p1[..., :, None, :], fa.segments[None, None, :, 0, :], fa.segments[None, None, :, 1, :])
            d = d - self.radii[:, None] - fa.radii[None, :]
            cols.append(d.reshape(d.shape[0], -1).min(axis=-1))
            names.append(fa.name)
        if len(self.self_pairs):
            i, j = self.self_pairs[:, 0], self.self_pairs[:, 1]
            d = segment_distance(p0[:, i], p1[:, i], p0[:, j], p1[:, j]) - self.radii[i] - self.radii[j]
            cols.append(d.min(axis=-1))
            names.append("self")
        if not cols:
            return np.full((q.shape[0], 1), np.inf), ["none"]
        return np.stack(cols, axis=-1), names

    def clearance(self, q, certificate: bool = False) -> np.ndarray:
        """Smallest signed gap per configuration. With ``certificate`` the
        self gap is halved, since both bodies of a self pair move."""
        q = np.atleast_2d(np.asarray(q, dtype=float))
        vals, names = self._pair_clearances(q)
        if certificate and names and names[-1] == "self":
            vals = vals.copy()
            vals[:, -1] *= 0.5
        return vals.min(axis=-1)

    def blockers(self, q) -> List[str]:
        vals, names = self._pair_clearances(np.atleast_2d(np.asarray(q, dtype=float)))
        return [n for n, v in zip(names, vals[0]) if v <= 0.0]

    def motion_bound(self, qa: np.ndarray, qb: np.ndarray) -> np.ndarray:
        """Upper bound on the displacement of any robot point along the
        straight joint-space segment."""
        return np.abs(qb - qa) @ self.lever


def collides(scene: CollisionScene, q) -> bool:
    """True when any active pair touches or penetrates (zero clearance counts)."""
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("configuration must be finite")
    return bool(scene.clearance(q)[0] <= 0.0)


def edge_free(scene: CollisionScene, qa, qb, resolution: float = EDGE_RESOLUTION) -> bool:
    """Certified check of the straight segment ``qa -> qb``.

    Pieces are bisected (never coarser than ``resolution``) until both
    ends of each piece have more clearance than half the motion bound of
    the piece, which proves the whole piece collision-free.
    """
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    n = max(1, int(math.ceil(np.max(np.abs(qb - qa)) / resolution)))
    s = np.linspace(0.0, 1.0, n + 1)
    nodes = qa + (qb - qa) * s[:, None]
    clear = scene.clearance(nodes, certificate=True)
    if np.any(clear <= 0.0):
        return False
    pieces = [(nodes[k], nodes[k + 1], clear[k], clear[k + 1]) for k in range(n)]
    while pieces:
        todo = []
        for a, b, ca, cb in pieces:
            half = 0.5 * scene.motion_bound(a, b)
            if ca > half and cb > half:
                continue
            if np.max(np.abs(b - a)) < MIN_CERT_STEP:
                return False
            todo.append((a, b, ca, cb))
        if not todo:
            return True
        mids = np.array([(a + b) / 2 for a, b, _, _ in todo])
        cm = scene.clearance(mids, certificate=True)
        if np.any(cm <= 0.0):
            return False
        pieces = []
        for (a, b, ca, cb), m, c in zip(todo, mids, cm):
            pieces.append((a, m, ca, c))
            pieces.append((m, b, c, cb))
    return True


@dataclass
class JointPath:
    waypoints: np.ndarray
    resolution: float = EDGE_RESOLUTION

    def __post_init__(self):
        self.waypoints = np.atleast_2d(np.asarray(self.waypoints, dtype=float))

    def __len__(self) -> int:
        return len(self.waypoints)

    @property
    def length(self) -> float:
        if len(self.waypoints) < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)))

    def write_csv(self, path) -> None:
        n = self.waypoints.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index"] + [f"q{j}" for j in range(1, n + 1)])
            for i, q in enumerate(self.waypoints):
                w.writerow([i] + [repr(float(v)) for v in q])


@dataclass(frozen=True)
class RRTParams:
    step: float = EXTEND_STEP
    goal_bias: float = GOAL_BIAS
    budget: int = BUDGET
    resolution: float = EDGE_RESOLUTION
    shortcuts: int = SHORTCUTS


def densify(points: np.ndarray, max_step: float) -> np.ndarray:
    out = [points[0]]
    for a, b in zip(points[:-1], points[1:]):
        k = max(1, int(math.ceil(np.max(np.abs(b - a)) / max_step)))
        for s in range(1, k + 1):
            out.append(a + (b - a) * (s / k))
    out[-1] = points[-1].copy()
    return np.array(out)


class _Tree:
    def __init__(self, root: np.ndarray, capacity: int = 1024):
        self.nodes = np.empty((capacity, root.size))
        self.parent = np.empty(capacity, dtype=int)
        self.nodes[0] = root
        self.parent[0] = -1
        self.size = 1

    def add(self, q: np.ndarray, parent: int) -> int:
        if self.size == len(self.nodes):
            self.nodes = np.vstack([self.nodes, np.empty_like(self.nodes)])
            self.parent = np.concatenate([self.parent, np.empty_like(self.parent)])
        self.nodes[self.size] = q
        self.parent[self.size] = parent
        self.size += 1
        return self.size - 1

    def nearest(self, q: np.ndarray) -> int:
        d = np.sum((self.nodes[: self.size] - q) ** 2, axis=1)
        return int(np.argmin(d))

    def path_to_root(self, i: int) -> List[np.ndarray]:
        out = []
        while i >= 0:
            out.append(self.nodes[i].copy())
            i = int(self.parent[i])
        return out


def _steer(a: np.ndarray, b: np.ndarray, step: float) -> np.ndarray:
    d = b - a
    m = np.max(np.abs(d))
    return b.copy() if m <= step else a + d * (step / m)


def shortcut(scene: CollisionScene, points: np.ndarray, attempts: int, rng: np.random.Generator,
             resolution: float = EDGE_RESOLUTION) -> np.ndarray:
    pts = [p for p in points]
    for _ in range(attempts):
        if len(pts) < 3:
            break
        i, j = sorted(rng.choice(len(pts), size=2, replace=False))
        if j - i < 2:
            continue
        if edge_free(scene, pts[i], pts[j], resolution):
            pts = pts[: i + 1] + pts[j:]
    return np.array(pts)


def rrt_connect(scene: CollisionScene, q_start, q_goal, params: RRTParams = RRTParams(), seed: int = 0) -> JointPath:
    """Bidirectional RRT (connect heuristic) in joint space.

    A direct connection is tried first. Returned waypoints are at most
    ``params.step`` apart and every edge has passed :func:`edge_free`.
    """
    model = scene.model
    qs = np.asarray(q_start, dtype=float)
    qg = np.asarray(q_goal, dtype=float)
    for name, q in (("start", qs), ("goal", qg)):
        if not model.within_limits(q):
            raise PlanningError(f"{name} configuration outside joint limits")
        if collides(scene, q):
            raise PlanningError(f"{name} configuration in collision", blocker=",".join(scene.blockers(q)))
    if np.array_equal(qs, qg):
        return JointPath(qs[None], params.resolution)
    rng = np.random.default_rng(seed)
    if edge_free(scene, qs, qg, params.resolution):
        return JointPath(densify(np.array([qs, qg]), params.step), params.resolution)

    lo, hi = model.lower, model.upper
    ta, tb = _Tree(qs), _Tree(qg)
    a_is_start = True

    def extend(tree: _Tree, target: np.ndarray):
        i = tree.nearest(target)
        q_new = _steer(tree.nodes[i], target, params.step)
        if edge_free(scene, tree.nodes[i], q_new, params.resolution):
            return tree.add(q_new, i), q_new
        return None, None

    for _ in range(params.budget):
        target_tree_root = tb.nodes[0]
        q_rand = target_tree_root.copy() if rng.random() < params.goal_bias else rng.uniform(lo, hi)
        ia, q_new = extend(ta, q_rand)
        if ia is not None:
            # connect: grow the other tree toward q_new until blocked or joined
            while True:
                ib, q_b = extend(tb, q_new)
                if ib is None:
                    break
                if np.array_equal(q_b, q_new):
                    pa = ta.path_to_root(ia)[::-1]
                    pb = tb.path_to_root(ib)[1:]
                    pts = np.array(pa + pb)
                    if not a_is_start:
                        pts = pts[::-1]
                    pts = shortcut(scene, pts, params.shortcuts, rng, params.resolution)
                    pts = densify(pts, params.step)
                    pts[0], pts[-1] = qs, qg
                    return JointPath(pts, params.resolution)
        ta, tb = tb, ta
        a_is_start = not a_is_start
    raise PlanningError(f"no path found within {params.budget} iterations")


def validate_path(scene: CollisionScene, path: JointPath, resolution: float) -> bool:
    """Sampled re-check of every edge at ``resolution`` (no certificate)."""
    pts = path.waypoints
    if len(pts) == 1:
        return not collides(scene, pts[0])
    dense = densify(pts, resolution)
    return bool(np.all(scene.clearance(dense) > 0.0))


@dataclass
class ArmRequest:
    name: str
    model: ManipulatorModel
    start: np.ndarray
    goal: np.ndarray


def prioritized_plan(arms: Sequence[ArmRequest], boxes: Sequence[Box] = (), params: RRTParams = RRTParams(),
                     seed: int = 0) -> Dict[str, JointPath]:
    """Plan one arm at a time. Arms already planned are frozen at their
    goals; arms not yet planned are frozen at their starts."""
    paths: Dict[str, JointPath] = {}
    for k, req in enumerate(arms):
        frozen = []
        for m, other in enumerate(arms):
            if m == k:
                continue
            q_other = other.goal if m < k else other.start
            frozen.append(frozen_arm(other.name, other.model, q_other))
        scene = CollisionScene(req.model, list(boxes), frozen)
        try:
            paths[req.name] = rrt_connect(scene, req.start, req.goal, params, seed + k)
        except PlanningError as exc:
            blocker = exc.blocker
            raise PlanningError(f"planning failed for arm {req.name}: {exc}"
                                + (f" (blocked by {blocker})" if blocker else ""), arm=req.name, blocker=blocker) from None
    return paths
