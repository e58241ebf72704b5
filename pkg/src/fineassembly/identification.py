"""Linear-in-parameters end-effector model seen from the wrist sensor.

Parameter vector (16): ``[f0 (3), tau0 (3), m, c (3), vec(I) (6)]`` where
``c`` is the first moment ``m * r_com`` in the sensor frame and ``vec(I)``
uses the ordering in :data:`INERTIA_ORDER`, inertia taken about the sensor
origin.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .kinematics import SensorKinematics, sensor_kinematics_batch
from .model import JointState, ManipulatorModel, Wrench

GRAVITY = 9.80665
INERTIA_ORDER = ("Ixx", "Ixy", "Ixz", "Iyy", "Iyz", "Izz")
N_PARAMS = 16
COND_WARN = 1e8


class RankDeficientError(ValueError):
    """Stacked regressor lacks full column rank (insufficient excitation)."""

    def __init__(self, deficiency: int, rank: int):
        self.deficiency = deficiency
        self.rank = rank
        super().__init__(
            f"stacked regressor is rank deficient: rank {rank} of {N_PARAMS}, "
            f"{deficiency}-dimensional unidentifiable subspace; excite the "
            "rotational motion more (use an optimized excitation trajectory)"
        )


def skew(v) -> np.ndarray:
    """Cross-product matrix, batched over leading axes."""
    v = np.asarray(v, dtype=float)
    S = np.zeros(v.shape[:-1] + (3, 3))
    S[..., 0, 1] = -v[..., 2]
    S[..., 0, 2] = v[..., 1]
    S[..., 1, 0] = v[..., 2]
    S[..., 1, 2] = -v[..., 0]
    S[..., 2, 0] = -v[..., 1]
    S[..., 2, 1] = v[..., 0]
    return S


def angular_matrix(w) -> np.ndarray:
    """3x6 matrix with ``L(w) @ vec(I) == I @ w``."""
    w = np.asarray(w, dtype=float)
    L = np.zeros(w.shape[:-1] + (3, 6))
    x, y, z = w[..., 0], w[..., 1], w[..., 2]
    L[..., 0, 0], L[..., 0, 1], L[..., 0, 2] = x, y, z
    L[..., 1, 1], L[..., 1, 3], L[..., 1, 4] = x, y, z
    L[..., 2, 2], L[..., 2, 4], L[..., 2, 5] = x, y, z
    return L


def vec_inertia(I) -> np.ndarray:
    I = np.asarray(I, dtype=float)
    return np.stack([I[..., 0, 0], I[..., 0, 1], I[..., 0, 2], I[..., 1, 1], I[..., 1, 2], I[..., 2, 2]], axis=-1)


def unvec_inertia(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    xx, xy, xz, yy, yz, zz = (v[..., k] for k in range(6))
    return np.stack([
        np.stack([xx, xy, xz], -1),
        np.stack([xy, yy, yz], -1),
        np.stack([xz, yz, zz], -1),
    ], -2)


def regressor(kin: SensorKinematics) -> np.ndarray:
    """6x10 ``A_s`` (batched if the kinematics arrays are)."""
    a = np.asarray(kin.a, dtype=float)
    w = np.asarray(kin.omega, dtype=float)
    dw = np.asarray(kin.domega, dtype=float)
    Sw = skew(w)
    A = np.zeros(a.shape[:-1] + (6, 10))
    A[..., :3, 0] = a
    A[..., :3, 1:4] = skew(dw) + Sw @ Sw
    A[..., 3:, 1:4] = -skew(a)
    A[..., 3:, 4:] = angular_matrix(dw) + Sw @ angular_matrix(w)
    return A


def augmented_regressor(kin: SensorKinematics) -> np.ndarray:
    """``[E6 | A_s]``: offsets first, then the ten inertial columns."""
    A = regressor(kin)
    out = np.zeros(A.shape[:-1] + (N_PARAMS,))
    out[..., :, :6] = np.eye(6)
    out[..., :, 6:] = A
    return out


@dataclass(frozen=True)
class InertialParams:
    f0: np.ndarray
    tau0: np.ndarray
    mass: float
    first_moment: np.ndarray
    inertia: np.ndarray  # vec form, INERTIA_ORDER

    @classmethod
    def from_vector(cls, phi) -> "InertialParams":
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (N_PARAMS,):
            raise ValueError(f"expected {N_PARAMS} parameters, got shape {phi.shape}")
        return cls(phi[0:3].copy(), phi[3:6].copy(), float(phi[6]), phi[7:10].copy(), phi[10:16].copy())

    @classmethod
    def from_body(cls, mass: float, com, inertia_com, f0=(0, 0, 0), tau0=(0, 0, 0)) -> "InertialParams":
        """Build from a physical body: COM position and inertia about the COM."""
        r = np.asarray(com, dtype=float)
        Ic = np.asarray(inertia_com, dtype=float)
        Io = Ic + mass * (r @ r * np.eye(3) - np.outer(r, r))
        return cls(np.asarray(f0, float), np.asarray(tau0, float), float(mass), mass * r, vec_inertia(Io))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.f0, self.tau0, [self.mass], self.first_moment, self.inertia])

    @property
    def inertia_matrix(self) -> np.ndarray:
        return unvec_inertia(self.inertia)

    @property
    def physical(self) -> bool:
        return self.mass >= 0.0

    def to_dict(self) -> dict:
        return {
            "f0": self.f0.tolist(),
            "tau0": self.tau0.tolist(),
            "mass": self.mass,
            "first_moment": self.first_moment.tolist(),
            "inertia": dict(zip(INERTIA_ORDER, self.inertia.tolist())),
            "vector": self.vector().tolist(),
        }


def random_body(rng: np.random.Generator, mass_range=(0.5, 3.0), offsets: bool = True) -> InertialParams:
    """Physically consistent random end effector (box-like inertia)."""
    m = rng.uniform(*mass_range)
    com = rng.uniform(-0.05, 0.05, 3) + np.array([0.0, 0.0, 0.08])
    dims = rng.uniform(0.03, 0.2, 3)
    Ic = np.diag(m / 12.0 * (np.sum(dims ** 2) - dims ** 2))
    R = _random_rotation(rng)
    Ic = R @ Ic @ R.T
    f0 = rng.normal(0, 2.0, 3) if offsets else np.zeros(3)
    t0 = rng.normal(0, 0.2, 3) if offsets else np.zeros(3)
    return InertialParams.from_body(m, com, Ic, f0, t0)


def _random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


@dataclass(frozen=True)
class WrenchSample:
    t: float
    state: JointState
    measured: Wrench

    def __post_init__(self):
        vals = np.concatenate([[self.t], self.state.q, self.state.qd, self.state.qdd, self.measured.vector()])
        if not np.all(np.isfinite(vals)):
            raise ValueError("wrench sample contains non-finite values")


@dataclass
class FitReport:
    rank: int
    condition: float
    residual_rms: float
    n_samples: int
    physical: bool

    def to_dict(self) -> dict:
        return dict(rank=self.rank, condition=self.condition, residual_rms=self.residual_rms,
                    n_samples=self.n_samples, physical=self.physical)


def _gravity_vector(gravity) -> np.ndarray:
    if np.isscalar(gravity):
        return np.array([0.0, 0.0, -float(gravity)])
    return np.asarray(gravity, dtype=float)


def kinematics_for(model: ManipulatorModel, q, qd, qdd, gravity=GRAVITY) -> SensorKinematics:
    a, w, dw, v, _ = sensor_kinematics_batch(model, q, qd, qdd, _gravity_vector(gravity))
    return SensorKinematics(a=a, omega=w, domega=dw, v=v)


def solve_stacked(A: np.ndarray, y: np.ndarray):
    """Least squares on a stacked ``(K*6, 16)`` system via SVD.

    Returns ``(phi, FitReport)``; raises :class:`RankDeficientError`.
    """
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    tol = max(A.shape) * np.finfo(float).eps * s[0] if s.size else 0.0
    rank = int(np.count_nonzero(s > tol))
    if rank < A.shape[1]:
        raise RankDeficientError(A.shape[1] - rank, rank)
    phi = Vt.T @ ((U.T @ y) / s)
    cond = float(s[0] / s[-1])
    if cond > COND_WARN:
        warnings.warn(f"identification is poorly conditioned (cond = {cond:.3g})", RuntimeWarning)
    res = y - A @ phi
    rms = float(np.sqrt(np.mean(res ** 2)))
    params = InertialParams.from_vector(phi)
    return params, FitReport(rank, cond, rms, A.shape[0] // 6, params.physical)


def estimate_parameters(samples: Sequence[WrenchSample], model: ManipulatorModel, gravity=GRAVITY):
    """Fit the 16 parameters to sensor readings taken along a trajectory."""
    if len(samples) < 3:
        raise ValueError("need at least 3 samples")
    q = np.array([s.state.q for s in samples])
    qd = np.array([s.state.qd for s in samples])
    qdd = np.array([s.state.qdd for s in samples])
    kin = kinematics_for(model, q, qd, qdd, gravity)
    A = augmented_regressor(kin).reshape(-1, N_PARAMS)
    y = np.array([s.measured.vector() for s in samples]).reshape(-1)
    return solve_stacked(A, y)


def predicted_wrench(kin: SensorKinematics, params: InertialParams) -> np.ndarray:
    return augmented_regressor(kin) @ params.vector()


def external_wrench(measured: Wrench, kin: SensorKinematics, params: InertialParams) -> Wrench:
    """Measured wrench minus offsets and the end effector's own dynamics."""
    ext = measured.vector() - predicted_wrench(kin, params).reshape(-1)
    return Wrench.from_vector(ext, frame=measured.frame)


def synthesize_samples(model: ManipulatorModel, params: InertialParams, t, q, qd, qdd,
                       noise_sigma: float = 0.0, rng=None, gravity=GRAVITY) -> List[WrenchSample]:
    """Simulated sensor readings (optionally with white noise) along a path."""
    kin = kinematics_for(model, q, qd, qdd, gravity)
    W = predicted_wrench(kin, params)
    if noise_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        W = W + rng.normal(0.0, noise_sigma, W.shape)
    return [
        WrenchSample(float(t[k]), JointState(q[k], qd[k], qdd[k]), Wrench.from_vector(W[k], frame="sensor"))
        for k in range(len(t))
    ]


SAMPLE_COLUMNS = (["t"] + [f"q{j}" for j in range(1, 7)] + [f"qd{j}" for j in range(1, 7)]
                  + [f"qdd{j}" for j in range(1, 7)] + ["fx", "fy", "fz", "tx", "ty", "tz"])


def write_samples_csv(path, samples: Sequence[WrenchSample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SAMPLE_COLUMNS)
        for s in samples:
            row = np.concatenate([[s.t], s.state.q, s.state.qd, s.state.qdd, s.measured.vector()])
            w.writerow([repr(float(x)) for x in row])


def read_samples_csv(path) -> List[WrenchSample]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != SAMPLE_COLUMNS:
            raise ValueError(f"{path}: expected header {','.join(SAMPLE_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                v = np.array([float(x) for x in row])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if v.size != len(SAMPLE_COLUMNS):
                raise ValueError(f"{path}:{lineno}: expected {len(SAMPLE_COLUMNS)} columns, got {v.size}")
            out.append(WrenchSample(v[0], JointState(v[1:7], v[7:13], v[13:19]), Wrench.from_vector(v[19:25], frame="sensor")))
    return out


def write_report_json(path, params: InertialParams, report: FitReport, extra: dict | None = None) -> None:
    doc = {"parameters": params.to_dict(), "fit": report.to_dict()}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
