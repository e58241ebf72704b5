"""Manipulability, joint-limit penalization, reachability maps and the
bimanual base-distance scan."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .kinematics import jacobian, solve_ik_batch
from .model import ManipulatorModel, make_transform

REACHABLE_THRESHOLD = 1e-6


class DomainError(ValueError):
    """Configuration at or beyond a joint limit: the penalty is unbounded."""


class GridMismatchError(ValueError):
    pass


def yoshikawa_index(J) -> float:
    """``sqrt(det(J J^T))``, computed as the product of singular values.

    Singular values below the usual rank tolerance count as zero, so a
    numerically rank-deficient Jacobian gives exactly 0.
    """
    J = np.asarray(J, dtype=float)
    if not np.all(np.isfinite(J)):
        raise ValueError("Jacobian must be finite")
    s = np.linalg.svd(J, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0.0
    tol = max(J.shape) * np.finfo(float).eps * s[0]
    if s[-1] <= tol or s.size < min(J.shape[-2], J.shape[-1]):
        return 0.0
    return float(np.prod(s))


def _yoshikawa_batch(J: np.ndarray) -> np.ndarray:
    s = np.linalg.svd(J, compute_uv=False)
    tol = max(J.shape[-2:]) * np.finfo(float).eps * s[..., :1]
    w = np.prod(s, axis=-1)
    return np.where(s[..., -1:].squeeze(-1) <= tol.squeeze(-1), 0.0, w)


def joint_limit_penalty(q, limits) -> float:
    """Sum over joints of ``(u - l)^2 / (4 (u - q)(q - l))``.

    Equals n with every joint at its midpoint and grows without bound at a
    limit. Raises :class:`DomainError` unless ``l < q < u`` strictly.
    """
    q = np.asarray(q, dtype=float)
    limits = np.asarray(limits, dtype=float)
    lo, hi = limits[..., 0], limits[..., 1]
    if np.any(q <= lo) or np.any(q >= hi):
        raise DomainError("joint at or beyond a limit; penalty is unbounded")
    return float(np.sum((hi - lo) ** 2 / (4.0 * (hi - q) * (q - lo))))


def _penalty_batch(q: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        P = np.sum((hi - lo) ** 2 / (4.0 * (hi - q) * (q - lo)), axis=-1)
    inside = np.all((q > lo) & (q < hi), axis=-1)
    return np.where(inside, P, np.inf)


def modified_index(model: ManipulatorModel, q) -> float:
    """Manipulability divided by the joint-limit penalty."""
    P = joint_limit_penalty(q, model.limits)
    w = yoshikawa_index(jacobian(model, q))
    return w / P


# ---------------------------------------------------------------------------
# reachability maps


@dataclass
class ReachabilityMap:
    """Voxel grid of best modified index per voxel center.

    ``origin`` is the center of voxel (0, 0, 0); values are raw ``w*``.
    """

    origin: np.ndarray
    resolution: float
    values: np.ndarray
    normalization: float = field(default=0.0)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if np.any(self.values < 0):
            raise ValueError("reachability values must be non-negative")
        if self.normalization == 0.0:
            self.normalization = float(self.values.max()) if self.values.size else 0.0

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.values.shape

    @property
    def voxel_volume(self) -> float:
        return self.resolution ** 3

    @property
    def normalized(self) -> np.ndarray:
        if self.normalization <= 0:
            return np.zeros_like(self.values)
        return self.values / self.normalization

    def centers(self) -> np.ndarray:
        idx = np.indices(self.shape).reshape(3, -1).T
        return self.origin + idx * self.resolution

    def reachable(self, threshold: float = REACHABLE_THRESHOLD) -> np.ndarray:
        return self.values > threshold

    def volume(self, threshold: float = REACHABLE_THRESHOLD) -> float:
        return float(np.count_nonzero(self.reachable(threshold))) * self.voxel_volume

    def same_grid(self, other: "ReachabilityMap") -> bool:
        return (
            self.shape == other.shape
            and math.isclose(self.resolution, other.resolution, rel_tol=1e-12)
            and np.allclose(self.origin, other.origin, atol=1e-9 * self.resolution)
        )

    def write_voxels(self, path, normalized: bool = True, skip_zero: bool = True) -> None:
        vals = (self.normalized if normalized else self.values).reshape(-1)
        pts = self.centers()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "z", "value"])
            for p, v in zip(pts, vals):
                if skip_zero and v == 0.0:
                    continue
                w.writerow([f"{p[0]:.6f}", f"{p[1]:.6f}", f"{p[2]:.6f}", f"{v:.9g}"])


def approach_rotations(count: int = 6, seed: int = 0) -> np.ndarray:
    """Tool orientations whose z axis is the approach direction.

    ``count == 6`` gives the axis-aligned set; otherwise ``count`` random
    directions from ``seed``.
    """
    if count == 6:
        dirs = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float)
    else:
        v = np.random.default_rng(seed).normal(size=(count, 3))
        dirs = v / np.linalg.norm(v, axis=1, keepdims=True)
    out = []
    for z in dirs:
        ref = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        x = np.cross(ref, z)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        out.append(np.stack([x, y, z], axis=1))
    return np.array(out)


def ik_seeds(model: ManipulatorModel, point_local: np.ndarray) -> np.ndarray:
    """Deterministic IK starting configurations for a base-frame point."""
    mid = model.midpoints
    yaw = np.arctan2(point_local[..., 1], point_local[..., 0])
    yaw = np.clip(yaw, model.lower[0] + 1e-3, model.upper[0] - 1e-3)
    seeds = []
    for elbow in (0.6, -0.6):
        s = np.broadcast_to(mid, point_local.shape[:-1] + (model.n,)).copy()
        s[..., 0] = yaw
        if model.n >= 3:
            s[..., 2] = np.clip(elbow, model.lower[2] + 1e-3, model.upper[2] - 1e-3)
        seeds.append(s)
    return np.stack(seeds, axis=-2)


def _evaluate_chunk(args):
    model, pts_local, rotations, max_iter = args
    return _evaluate_points(model, pts_local, rotations, max_iter)


def _evaluate_points(model: ManipulatorModel, pts_local: np.ndarray, rotations: np.ndarray, max_iter: int) -> np.ndarray:
    """Best ``w*`` over orientations and seeds for base-frame points."""
    P = len(pts_local)
    if P == 0:
        return np.zeros(0)
    seeds = ik_seeds(model, pts_local)  # (P, S, n)
    S = seeds.shape[1]
    O = len(rotations)
    targets = np.zeros((P, O, S, 4, 4))
    targets[..., 3, 3] = 1.0
    targets[..., :3, 3] = pts_local[:, None, None, :]
    targets[..., :3, :3] = rotations[None, :, None]
    q0 = np.broadcast_to(seeds[:, None], (P, O, S, model.n))
    base_model = model.with_base(np.eye(4))
    q, ok, _ = solve_ik_batch(base_model, targets.reshape(-1, 4, 4), q0.reshape(-1, model.n),
                               max_iter=max_iter, stall_window=25)
    wstar = np.zeros(len(q))
    if np.any(ok):
        J = jacobian(base_model, q[ok])
        w = _yoshikawa_batch(J)
        P_pen = _penalty_batch(q[ok], model.lower, model.upper)
        wstar[ok] = np.where(np.isfinite(P_pen), w / P_pen, 0.0)
    return wstar.reshape(P, O * S).max(axis=1)


def shoulder_and_arm_length(model: ManipulatorModel) -> Tuple[np.ndarray, float]:
    """Base-frame location of the second joint and a bound on the
    distance from it to the flange (used to skip unreachable voxels)."""
    shoulder = np.zeros(3)
    T = np.eye(4)
    for j in model.joints[:2]:
        T = T @ j.origin
    shoulder = T[:3, 3]
    arm = float(sum(np.linalg.norm(j.origin[:3, 3]) for j in model.joints[2:]))
    return shoulder, arm


def evaluate_local_points(
    model: ManipulatorModel,
    pts_local: np.ndarray,
    orientation_samples: int = 6,
    seed: int = 0,
    max_iter: int = 200,
    jobs: int = 1,
    chunk: int = 4000,
) -> np.ndarray:
    """``w*`` for base-frame points; far points are 0 without IK."""
    pts_local = np.asarray(pts_local, dtype=float).reshape(-1, 3)
    out = np.zeros(len(pts_local))
    shoulder, arm = shoulder_and_arm_length(model)
    near = np.linalg.norm(pts_local - shoulder, axis=1) <= arm + 1e-9
    idx = np.flatnonzero(near)
    rotations = approach_rotations(orientation_samples, seed)
    # orientations are world-aligned; express them in the base frame
    Rb = np.asarray(model.base_pose)[:3, :3]
    rotations = Rb.T @ rotations
    chunks = [idx[i:i + chunk] for i in range(0, len(idx), chunk)]
    work = [(model, pts_local[c], rotations, max_iter) for c in chunks]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_evaluate_chunk, work))
    else:
        results = [_evaluate_chunk(w) for w in work]
    for c, r in zip(chunks, results):
        out[c] = r
    return out


def reachability_map(
    model: ManipulatorModel,
    box,
    resolution: float,
    orientation_samples: int = 6,
    seed: int = 0,
    max_iter: int = 200,
    jobs: int = 1,
) -> ReachabilityMap:
    """Reachability of ``model`` (at its base pose) over a world box.

    Args:
        box: ``(lower_corner, upper_corner)``; voxel centers start at the
            lower corner and step by ``resolution`` while inside the box.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    lo = np.asarray(box[0], dtype=float)
    hi = np.asarray(box[1], dtype=float)
    shape = tuple(int(np.floor((hi[k] - lo[k]) / resolution + 1e-9)) + 1 for k in range(3))
    grid = ReachabilityMap(lo, resolution, np.zeros(shape))
    pts = grid.centers()
    T = np.linalg.inv(np.asarray(model.base_pose))
    local = pts @ T[:3, :3].T + T[:3, 3]
    vals = evaluate_local_points(model, local, orientation_samples, seed, max_iter, jobs)
    return ReachabilityMap(lo, resolution, vals.reshape(shape))


def bimanual_volumes(mapA: ReachabilityMap, mapB: ReachabilityMap, threshold: float = REACHABLE_THRESHOLD):
    """``(union, intersection)`` volumes in m^3 of voxels reachable by either
    / both arms."""
    if not mapA.same_grid(mapB):
        raise GridMismatchError("reachability maps are on different grids")
    a = mapA.reachable(threshold)
    b = mapB.reachable(threshold)
    v = mapA.voxel_volume
    return float(np.count_nonzero(a | b)) * v, float(np.count_nonzero(a & b)) * v


def shared_dexterity(mapA: ReachabilityMap, mapB: ReachabilityMap, threshold: float = REACHABLE_THRESHOLD) -> float:
    """Mean over jointly reachable voxels of the weaker arm's normalized
    index; 0 when nothing is shared."""
    both = mapA.reachable(threshold) & mapB.reachable(threshold)
    if not both.any():
        return 0.0
    return float(np.minimum(mapA.normalized, mapB.normalized)[both].mean())


# ---------------------------------------------------------------------------
# base distance optimization


@dataclass(frozen=True)
class BimanualObjective:
    alpha: float = 0.5
    beta: float = 0.5
    d_min: float = 0.6
    d_max: float = 1.6
    step: float = 0.02

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ValueError("weights need alpha >= 0, beta >= 0, alpha + beta > 0")
        if not self.d_min < self.d_max:
            raise ValueError("distance range needs d_min < d_max")
        if self.step <= 0:
            raise ValueError("scan step must be positive")

    def candidates(self) -> np.ndarray:
        n = int(np.floor((self.d_max - self.d_min) / self.step + 1e-9))
        ds = self.d_min + self.step * np.arange(n + 1)
        if ds.size == 0:
            raise ValueError("empty candidate set")
        return np.round(ds, 12)


@dataclass(frozen=True)
class GridSpec:
    resolution: float = 0.05
    z_min: float = 0.0
    z_max: Optional[float] = None


@dataclass
class BaseDistanceResult:
    d_best: float
    objective: float
    table: List[Dict[str, float]]
    single_map: ReachabilityMap
    maps: Tuple[ReachabilityMap, ReachabilityMap]

    def write_table(self, path) -> None:
        cols = ["d", "union", "intersection", "objective", "d_effective", "shared_dexterity"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in self.table:
                w.writerow([f"{row[c]:.9g}" for c in cols])


def single_arm_map(model: ManipulatorModel, grid: GridSpec, orientation_samples: int = 6, seed: int = 0,
                   max_iter: int = 200, jobs: int = 1) -> ReachabilityMap:
    """Map in the arm's own base frame on a node-centered grid that is
    symmetric in x and y, so it can be re-indexed for a mirrored arm."""
    h = grid.resolution
    shoulder, arm = shoulder_and_arm_length(model)
    r = max(abs(shoulder[0]), abs(shoulder[1])) + arm
    m = int(np.ceil(r / h))
    z_max = grid.z_max if grid.z_max is not None else shoulder[2] + arm
    nz = int(np.floor((z_max - grid.z_min) / h + 1e-9)) + 1
    local_model = model.with_base(np.eye(4))
    box = ((-m * h, -m * h, grid.z_min), (m * h, m * h, grid.z_min + (nz - 1) * h))
    return reachability_map(local_model, box, h, orientation_samples, seed, max_iter, jobs)


def place_facing_pair(local: ReachabilityMap, shift: int) -> Tuple[ReachabilityMap, ReachabilityMap]:
    """Two copies of ``local`` on a shared world grid: arm A at the origin of
    the local grid, arm B ``shift`` voxels along +x and turned by pi about z.
    The world x axis runs from A toward B; the world origin is midway."""
    nx, ny, nz = local.shape
    m = (nx - 1) // 2
    h = local.resolution
    wx = nx + shift
    A = np.zeros((wx, ny, nz))
    B = np.zeros((wx, ny, nz))
    A[:nx] = local.values
    # world index i (from -m) maps to B-local x index (shift - i); y flips
    B[shift:shift + nx] = local.values[::-1, ::-1, :]
    origin = np.array([-m * h - shift * h / 2.0, local.origin[1], local.origin[2]])
    norm = local.normalization
    return ReachabilityMap(origin, h, A, norm), ReachabilityMap(origin, h, B, norm)


def optimize_base_distance(
    model: ManipulatorModel,
    objective: BimanualObjective,
    grid: GridSpec = GridSpec(),
    seed: int = 0,
    orientation_samples: int = 6,
    max_iter: int = 200,
    jobs: int = 1,
    local_map: Optional[ReachabilityMap] = None,
) -> BaseDistanceResult:
    """Exhaustive scan over the base separation of two facing arms.

    The single-arm map is computed once in the base frame and re-indexed for
    each candidate, so the separation used for the volumes is ``d`` rounded
    to the voxel size (reported as ``d_effective``). The best candidate is
    the objective argmax; exact ties go to the higher shared dexterity,
    then to the smaller rounding error, then to the smaller ``d``.
    """
    local = local_map if local_map is not None else single_arm_map(model, grid, orientation_samples, seed, max_iter, jobs)
    h = local.resolution
    rows = []
    cache: Dict[int, Tuple[float, float, float]] = {}
    for d in objective.candidates():
        shift = int(round(d / h))
        if shift not in cache:
            mA, mB = place_facing_pair(local, shift)
            u, i = bimanual_volumes(mA, mB)
            cache[shift] = (u, i, shared_dexterity(mA, mB))
        u, i, dex = cache[shift]
        rows.append({
            "d": float(d),
            "d_effective": shift * h,
            "union": u,
            "intersection": i,
            "objective": objective.alpha * u + objective.beta * i,
            "shared_dexterity": dex,
        })
    best = max(rows, key=lambda r: r["objective"])["objective"]
    tol = 1e-9 * max(1.0, abs(best))
    tied = [r for r in rows if r["objective"] >= best - tol]
    pick = min(tied, key=lambda r: (-round(r["shared_dexterity"], 12), abs(r["d"] - r["d_effective"]), r["d"]))
    maps = place_facing_pair(local, int(round(pick["d"] / h)))
    return BaseDistanceResult(pick["d"], pick["objective"], rows, local, maps)


def facing_bases(d: float) -> Tuple[np.ndarray, np.ndarray]:
    """Base poses of two arms facing each other across the world origin."""
    A = make_transform(np.eye(3), [-d / 2.0, 0.0, 0.0])
    B = make_transform(Rotation.from_euler("z", math.pi).as_matrix(), [d / 2.0, 0.0, 0.0])
    return A, B
