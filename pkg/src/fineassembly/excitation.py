"""Finite Fourier series excitation trajectories and their d-optimal design."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .identification import GRAVITY, augmented_regressor, kinematics_for
from .model import JointState, ManipulatorModel

SAFETY = 1.05
GRID_POINTS = 1000
GAMMA_SAMPLES = 200


class InfeasibleError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExcitationParams:
    """Per-joint coefficients ``a`` and ``b`` of shape ``(n, N)`` (rad/s),
    offsets ``q0`` (rad) and base frequency ``wf`` (rad/s)."""

    a: np.ndarray
    b: np.ndarray
    q0: np.ndarray
    wf: float

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        q0 = np.asarray(self.q0, dtype=float).reshape(-1)
        if a.shape != b.shape or a.shape[0] != q0.size:
            raise ValueError("a, b must be (n, N) and q0 (n,)")
        if a.shape[1] < 1:
            raise ValueError("need at least one harmonic")
        if not self.wf > 0:
            raise ValueError("base frequency must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "q0", q0)
        object.__setattr__(self, "wf", float(self.wf))

    @property
    def n_joints(self) -> int:
        return self.a.shape[0]

    @property
    def harmonics(self) -> int:
        return self.a.shape[1]

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.wf

    @property
    def params_per_joint(self) -> int:
        return 2 * self.harmonics + 1

    @classmethod
    def zeros(cls, n: int, N: int, wf: float, q0=None) -> "ExcitationParams":
        return cls(np.zeros((n, N)), np.zeros((n, N)), np.zeros(n) if q0 is None else q0, wf)

    def per_joint(self) -> np.ndarray:
        """``(n, 2N+1)`` rows of ``[a_1..a_N, b_1..b_N, q0]``."""
        return np.hstack([self.a, self.b, self.q0[:, None]])

    @classmethod
    def from_per_joint(cls, rows, wf: float) -> "ExcitationParams":
        rows = np.asarray(rows, dtype=float)
        if rows.ndim != 2 or rows.shape[1] % 2 != 1 or rows.shape[1] < 3:
            raise ValueError("each joint row needs 2N+1 values")
        N = (rows.shape[1] - 1) // 2
        return cls(rows[:, :N], rows[:, N:2 * N], rows[:, -1], wf)

    def to_dict(self) -> dict:
        return {"wf": self.wf, "harmonics": self.harmonics, "joints": self.per_joint().tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ExcitationParams":
        p = cls.from_per_joint(d["joints"], d["wf"])
        if "harmonics" in d and int(d["harmonics"]) != p.harmonics:
            raise ValueError("harmonic count does not match coefficient rows")
        return p


def eval_trajectory(params: ExcitationParams, t) -> JointState:
    """Joint position, velocity and acceleration at time(s) ``t``.

    Scalar ``t`` gives ``(n,)`` arrays, a vector of times ``(T, n)``.
    """
    t = np.asarray(t, dtype=float)
    k = np.arange(1, params.harmonics + 1)
    wk = params.wf * k  # (N,)
    arg = t[..., None] * wk  # (..., N)
    s, c = np.sin(arg), np.cos(arg)
    a, b = params.a, params.b  # (n, N)
    q = params.q0 + s @ (a / wk).T - c @ (b / wk).T
    qd = c @ a.T + s @ b.T
    qdd = -s @ (a * wk).T + c @ (b * wk).T
    return JointState(q, qd, qdd)


def period_grid(params: ExcitationParams, points: int = GRID_POINTS) -> np.ndarray:
    return np.arange(points) * (params.period / points)


@dataclass
class ConstraintReport:
    peak_position: np.ndarray  # max |q - mid|
    peak_velocity: np.ndarray
    peak_acceleration: np.ndarray
    position_limit: np.ndarray  # half range
    velocity_limit: np.ndarray
    acceleration_limit: np.ndarray
    margin: float
    joint_ok: np.ndarray = field(init=False)

    def __post_init__(self):
        m = self.margin
        self.joint_ok = (
            (m * self.peak_position <= self.position_limit)
            & (m * self.peak_velocity <= self.velocity_limit)
            & (m * self.peak_acceleration <= self.acceleration_limit)
        )

    @property
    def ok(self) -> bool:
        return bool(np.all(self.joint_ok))


def check_constraints(params: ExcitationParams, model: ManipulatorModel, t_grid=None,
                      margin: float = SAFETY) -> ConstraintReport:
    """Peaks of |q - mid|, |qd|, |qdd| on ``t_grid`` against the limits,
    with peaks inflated by ``margin``."""
    if params.n_joints != model.n:
        raise ValueError("trajectory and model joint counts differ")
    t = period_grid(params) if t_grid is None else np.asarray(t_grid, dtype=float)
    st = eval_trajectory(params, t)
    mid = model.midpoints
    return ConstraintReport(
        np.max(np.abs(st.q - mid), axis=0),
        np.max(np.abs(st.qd), axis=0),
        np.max(np.abs(st.qdd), axis=0),
        0.5 * (model.upper - model.lower),
        model.velocity_limits,
        model.acceleration_limits,
        margin,
    )


def sample_times(params: ExcitationParams, count: int = GAMMA_SAMPLES) -> np.ndarray:
    return np.arange(count) * (params.period / count)


def stacked_regressor(params: ExcitationParams, model: ManipulatorModel, times, gravity=GRAVITY) -> np.ndarray:
    st = eval_trajectory(params, times)
    return augmented_regressor(kinematics_for(model, st.q, st.qd, st.qdd, gravity))


def information_matrix(params: ExcitationParams, model: ManipulatorModel, times=None, gravity=GRAVITY) -> np.ndarray:
    """``sum_t A*(t)^T A*(t)`` along the trajectory."""
    times = sample_times(params) if times is None else times
    A = stacked_regressor(params, model, times, gravity)
    G = np.einsum("tij,tik->jk", A, A)
    return 0.5 * (G + G.T)


def log_det(G: np.ndarray) -> float:
    sign, val = np.linalg.slogdet(G)
    return float(val) if sign > 0 else -math.inf


# ---------------------------------------------------------------------------
# optimization


class _Scaler:
    """Largest per-joint scale of the oscillating part that keeps a
    trajectory feasible on a fixed grid."""

    def __init__(self, model: ManipulatorModel, wf: float, N: int, grid_points: int, margin: float):
        self.model = model
        self.margin = margin * (1.0 + (math.pi * N / grid_points) ** 2)
        self.t = np.arange(grid_points) * (2 * math.pi / wf / grid_points)
        self.wf = wf

    def max_scale(self, params: ExcitationParams) -> np.ndarray:
        m = self.model
        osc = eval_trajectory(ExcitationParams(params.a, params.b, np.zeros(m.n), self.wf), self.t)
        c = params.q0 - m.midpoints
        L = 0.5 * (m.upper - m.lower) / self.margin
        omax = osc.q.max(axis=0)
        omin = osc.q.min(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            s_hi = np.where(omax > 0, (L - c) / omax, np.inf)
            s_lo = np.where(omin < 0, (L + c) / -omin, np.inf)
            s_v = m.velocity_limits / self.margin / np.abs(osc.qd).max(axis=0)
            s_a = m.acceleration_limits / self.margin / np.abs(osc.qdd).max(axis=0)
        s = np.minimum.reduce([s_hi, s_lo, s_v, s_a])
        return np.where(np.isfinite(s), s, 0.0)

    def feasible(self, params: ExcitationParams) -> bool:
        return bool(np.all(self.max_scale(params) >= 1.0) and np.all(np.abs(params.q0 - self.model.midpoints)
                                                                      <= 0.5 * (self.model.upper - self.model.lower) / self.margin))

    def project(self, params: ExcitationParams) -> ExcitationParams:
        s = np.minimum(self.max_scale(params), 1.0)[:, None]
        return ExcitationParams(params.a * s, params.b * s, params.q0, params.wf)

    def fill(self, params: ExcitationParams, fraction: float = 1.0) -> ExcitationParams:
        s = (self.max_scale(params) * fraction)[:, None]
        return ExcitationParams(params.a * s, params.b * s, params.q0, params.wf)


def random_feasible(model: ManipulatorModel, N: int, wf: float, rng: np.random.Generator,
                    grid_points: int = GRID_POINTS, margin: float = SAFETY,
                    offset_fraction: float = 0.2) -> ExcitationParams:
    """Random coefficients (spectrum falling as 1/k) scaled to the largest
    feasible amplitude per joint; offsets near the joint midpoints."""
    k = np.arange(1, N + 1)
    half = 0.5 * (model.upper - model.lower)
    q0 = model.midpoints + rng.uniform(-offset_fraction, offset_fraction, model.n) * half
    a = rng.normal(size=(model.n, N)) / k
    b = rng.normal(size=(model.n, N)) / k
    p = ExcitationParams(a, b, q0, wf)
    return _Scaler(model, wf, N, grid_points, margin).fill(p, 0.999)


@dataclass
class ExcitationResult:
    params: ExcitationParams
    log_det: float
    history: List[float]
    evaluations: int


def optimize_excitation(
    model: ManipulatorModel,
    N: int = 5,
    wf: float = 2 * math.pi * 0.1,
    budget: int = 4000,
    seed: int = 0,
    starts: int = 16,
    warm_start: Optional[ExcitationParams] = None,
    grid_points: int = GRID_POINTS,
    samples: int = GAMMA_SAMPLES,
    margin: float = SAFETY,
) -> ExcitationResult:
    """Maximize log det of the information matrix under the joint limits.

    Random feasible multi-start followed by a compass pattern search from
    the best start. A trial move that breaks a limit is pulled back by
    shrinking the offending joint's oscillation, so every evaluated point
    is feasible. ``budget`` counts objective evaluations.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if not wf > 0:
        raise ValueError("base frequency must be positive")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    scaler = _Scaler(model, wf, N, grid_points, margin)
    times = np.arange(samples) * (2 * math.pi / wf / samples)
    evals = 0

    def score(p: ExcitationParams) -> float:
        nonlocal evals
        evals += 1
        return log_det(information_matrix(p, model, times))

    best, best_val = None, -math.inf
    history: List[float] = []
    if warm_start is not None:
        if warm_start.harmonics != N or not math.isclose(warm_start.wf, wf):
            raise ValueError("warm start has a different N or base frequency")
        if scaler.feasible(warm_start):
            best, best_val = warm_start, score(warm_start)
            history.append(best_val)
    for _ in range(starts):
        if evals >= budget:
            break
        p = random_feasible(model, N, wf, rng, grid_points, margin)
        v = score(p)
        if v > best_val:
            best, best_val = p, v
            history.append(v)
    if best is None:
        raise InfeasibleError("no feasible excitation trajectory found within the budget")

    # compass search over the per-joint coefficient rows
    x = best.per_joint()
    scale = np.abs(np.hstack([best.a, best.b])).max(axis=1, keepdims=True)
    step = np.hstack([np.repeat(0.25 * scale, 2 * N, axis=1), 0.05 * (model.upper - model.lower)[:, None]])
    min_step = 1e-4 * step
    while evals < budget and np.any(step > min_step):
        improved = False
        for idx in rng.permutation(x.size):
            if evals >= budget:
                break
            j, c = divmod(idx, x.shape[1])
            if step[j, c] <= min_step[j, c]:
                continue
            for sgn in (1.0, -1.0):
                y = x.copy()
                y[j, c] += sgn * step[j, c]
                cand = scaler.project(ExcitationParams.from_per_joint(y, wf))
                if not scaler.feasible(cand):
                    continue
                v = score(cand)
                if v > best_val:
                    x, best, best_val = cand.per_joint(), cand, v
                    history.append(v)
                    improved = True
                    break
                if evals >= budget:
                    break
        if not improved:
            step *= 0.5
    return ExcitationResult(best, best_val, history, evals)


# ---------------------------------------------------------------------------
# files


def write_trajectory_csv(path, params: ExcitationParams, points: int = GRID_POINTS) -> None:
    t = period_grid(params, points)
    st = eval_trajectory(params, t)
    n = params.n_joints
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"q{j}" for j in range(1, n + 1)] + [f"qd{j}" for j in range(1, n + 1)]
                   + [f"qdd{j}" for j in range(1, n + 1)])
        for k in range(len(t)):
            w.writerow([repr(float(v)) for v in np.concatenate([[t[k]], st.q[k], st.qd[k], st.qdd[k]])])


def save_params(path, params: ExcitationParams, extra: Optional[dict] = None) -> None:
    doc = params.to_dict()
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_params(path) -> ExcitationParams:
    with open(path) as fh:
        return ExcitationParams.from_dict(json.load(fh))
