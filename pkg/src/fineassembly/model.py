"""Shared domain types and configuration loading.

Everything is stored in SI units (m, rad, N, kg). Config files tag every
dimensional value with a unit and are converted on load, e.g.::

    {"value": 345, "unit": "mm"}      or      "345 mm"
    {"value": [0, 0, 345], "unit": "mm"}
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CONFIG_VERSION = 1

_UNITS = {
    # length
    "m": ("length", 1.0),
    "cm": ("length", 1e-2),
    "mm": ("length", 1e-3),
    # angle
    "rad": ("angle", 1.0),
    "deg": ("angle", math.pi / 180.0),
    # rates
    "rad/s": ("angvel", 1.0),
    "deg/s": ("angvel", math.pi / 180.0),
    "rad/s^2": ("angacc", 1.0),
    "deg/s^2": ("angacc", math.pi / 180.0),
    "m/s": ("linvel", 1.0),
    "mm/s": ("linvel", 1e-3),
    # force / torque / stiffness
    "N": ("force", 1.0),
    "Nm": ("torque", 1.0),
    "N/m": ("stiffness", 1.0),
    "N/mm": ("stiffness", 1e3),
    "m/N": ("compliance", 1.0),
    "mm/N": ("compliance", 1e-3),
    "m*s/N": ("damping_compliance", 1.0),
    "kg": ("mass", 1.0),
    "s": ("time", 1.0),
    "ms": ("time", 1e-3),
    "Hz": ("frequency", 1.0),
}

# Canonical unit written back by the serializers.
_SI_UNIT = {
    "length": "m",
    "angle": "rad",
    "angvel": "rad/s",
    "angacc": "rad/s^2",
    "linvel": "m/s",
    "force": "N",
    "torque": "Nm",
    "stiffness": "N/m",
    "compliance": "m/N",
    "damping_compliance": "m*s/N",
    "mass": "kg",
    "time": "s",
    "frequency": "Hz",
}


class ConfigError(ValueError):
    """Raised for unreadable or invalid configuration files."""


def _fail(ctx: str, msg: str):
    raise ConfigError(f"{ctx}: {msg}")


def quantity(raw: Any, kind: str, ctx: str = "config") -> Any:
    """Convert a unit-tagged config value to SI. Returns float or ndarray."""
    if isinstance(raw, str):
        parts = raw.strip().split()
        if len(parts) != 2:
            _fail(ctx, f"expected '<number> <unit>', got {raw!r}")
        try:
            value: Any = float(parts[0])
        except ValueError:
            _fail(ctx, f"not a number: {parts[0]!r}")
        unit = parts[1]
    elif isinstance(raw, dict):
        if "value" not in raw or "unit" not in raw:
            _fail(ctx, "quantity needs 'value' and 'unit'")
        value, unit = raw["value"], raw["unit"]
    else:
        _fail(ctx, f"missing unit tag on {raw!r}")
    if unit not in _UNITS:
        _fail(ctx, f"unknown unit {unit!r}")
    unit_kind, scale = _UNITS[unit]
    if unit_kind != kind:
        _fail(ctx, f"unit {unit!r} is a {unit_kind}, expected {kind}")
    if isinstance(value, (list, tuple)):
        arr = np.asarray(value, dtype=float) * scale
        if not np.all(np.isfinite(arr)):
            _fail(ctx, "non-finite value")
        return arr
    try:
        out = float(value) * scale
    except (TypeError, ValueError):
        _fail(ctx, f"not a number: {value!r}")
    if not math.isfinite(out):
        _fail(ctx, "non-finite value")
    return out


def tagged(value, kind: str):
    """Inverse of :func:`quantity` for SI values."""
    unit = _SI_UNIT[kind]
    if isinstance(value, np.ndarray):
        return {"value": [float(v) for v in value], "unit": unit}
    return {"value": float(value), "unit": unit}


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# rigid transforms


def make_transform(R=None, p=None) -> np.ndarray:
    T = np.eye(4)
    if R is not None:
        T[:3, :3] = R
    if p is not None:
        T[:3, 3] = p
    return T


def rpy_matrix(rpy) -> np.ndarray:
    """Fixed-axis roll/pitch/yaw (x, then y, then z) to a rotation matrix."""
    return Rotation.from_euler("xyz", rpy).as_matrix()


def invert_transform(T: np.ndarray) -> np.ndarray:
    R = T[:3, :3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ T[:3, 3]
    return out


@dataclass(frozen=True)
class Pose:
    """Position (m) plus unit quaternion, scalar-last (x, y, z, w)."""

    position: np.ndarray
    quaternion: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        quat = np.asarray(self.quaternion, dtype=float).reshape(4)
        n = np.linalg.norm(quat)
        if not np.all(np.isfinite(p)) or not np.isfinite(n) or n == 0:
            raise ValueError("pose must be finite with a nonzero quaternion")
        quat = quat / n
        object.__setattr__(self, "position", _frozen(p))
        object.__setattr__(self, "quaternion", _frozen(quat))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        return cls(T[:3, 3], Rotation.from_matrix(T[:3, :3]).as_quat())

    @classmethod
    def from_xyz_rpy(cls, xyz, rpy=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(xyz, Rotation.from_euler("xyz", rpy).as_quat())

    @property
    def rotation(self) -> np.ndarray:
        return Rotation.from_quat(self.quaternion).as_matrix()

    def matrix(self) -> np.ndarray:
        return make_transform(self.rotation, self.position)

    @property
    def yaw(self) -> float:
        R = self.rotation
        return math.atan2(R[1, 0], R[0, 0])

    def compose(self, other: "Pose") -> "Pose":
        return Pose.from_matrix(self.matrix() @ other.matrix())

    def inverse(self) -> "Pose":
        return Pose.from_matrix(invert_transform(self.matrix()))


@dataclass(frozen=True)
class Wrench:
    force: np.ndarray
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))
    frame: str = "sensor"

    def __post_init__(self):
        f = np.asarray(self.force, dtype=float).reshape(3)
        t = np.asarray(self.torque, dtype=float).reshape(3)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(t))):
            raise ValueError("wrench components must be finite")
        object.__setattr__(self, "force", _frozen(f))
        object.__setattr__(self, "torque", _frozen(t))

    @classmethod
    def from_vector(cls, v, frame: str = "sensor") -> "Wrench":
        v = np.asarray(v, dtype=float)
        return cls(v[:3], v[3:6], frame)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    qd: Optional[np.ndarray] = None
    qdd: Optional[np.ndarray] = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        qd = np.zeros_like(q) if self.qd is None else np.asarray(self.qd, dtype=float)
        qdd = np.zeros_like(q) if self.qdd is None else np.asarray(self.qdd, dtype=float)
        if qd.shape != q.shape or qdd.shape != q.shape:
            raise ValueError("q, qd, qdd must share a shape")
        object.__setattr__(self, "q", _frozen(q))
        object.__setattr__(self, "qd", _frozen(qd))
        object.__setattr__(self, "qdd", _frozen(qdd))


# ---------------------------------------------------------------------------
# robot description


@dataclass(frozen=True)
class JointSpec:
    """One revolute (or prismatic) joint.

    ``origin`` is the fixed transform from the previous joint frame (or the
    base) to this joint's frame; the joint then moves about/along ``axis``
    expressed in its own frame.
    """

    name: str
    axis: np.ndarray
    origin: np.ndarray
    lower: float
    upper: float
    velocity: float
    acceleration: float
    kind: str = "revolute"

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        n = np.linalg.norm(axis)
        if n == 0:
            raise ValueError(f"joint {self.name}: zero axis")
        object.__setattr__(self, "axis", _frozen(axis / n))
        object.__setattr__(self, "origin", _frozen(np.asarray(self.origin, dtype=float).reshape(4, 4)))
        if not self.lower < self.upper:
            raise ValueError(f"joint {self.name}: lower limit {self.lower} must be < upper {self.upper}")
        if self.velocity <= 0 or self.acceleration <= 0:
            raise ValueError(f"joint {self.name}: velocity/acceleration limits must be > 0")
        if self.kind not in ("revolute", "prismatic"):
            raise ValueError(f"joint {self.name}: unknown kind {self.kind!r}")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True)
class GripperSpec:
    max_opening: float = 0.085
    force_range: Tuple[float, float] = (30.0, 100.0)
    height_delta: float = 0.0139
    compliant_tip: bool = True
    tcp_length: float = 0.150
    pad_width: float = 0.022
    tip_force_limit: float = 15.0

    def __post_init__(self):
        if self.max_opening <= 0:
            raise ValueError("gripper opening must be positive")
        lo, hi = self.force_range
        if not 0 <= lo <= hi:
            raise ValueError("gripper force range must satisfy 0 <= min <= max")

    @property
    def opening_range(self) -> Tuple[float, float]:
        return (0.0, self.max_opening)


@dataclass(frozen=True)
class SensorRange:
    force: np.ndarray = field(default_factory=lambda: np.array([32.0, 32.0, 100.0]))
    torque: np.ndarray = field(default_factory=lambda: np.array([2.5, 2.5, 2.5]))

    def __post_init__(self):
        object.__setattr__(self, "force", _frozen(self.force))
        object.__setattr__(self, "torque", _frozen(self.torque))


@dataclass(frozen=True)
class ManipulatorModel:
    name: str
    joints: Tuple[JointSpec, ...]
    base_pose: np.ndarray = field(default_factory=lambda: np.eye(4))
    sensor_offset: np.ndarray = field(default_factory=lambda: np.eye(4))
    gripper: GripperSpec = field(default_factory=GripperSpec)
    sensor_range: SensorRange = field(default_factory=SensorRange)
    link_radii: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        if not self.joints:
            raise ValueError("model needs at least one joint")
        object.__setattr__(self, "base_pose", _frozen(np.asarray(self.base_pose).reshape(4, 4)))
        object.__setattr__(self, "sensor_offset", _frozen(np.asarray(self.sensor_offset).reshape(4, 4)))
        radii = tuple(float(r) for r in self.link_radii) or (0.05,) * (len(self.joints) + 1)
        if len(radii) != len(self.joints) + 1:
            raise ValueError("link_radii needs one entry per link (joints + 1 for the tool)")
        object.__setattr__(self, "link_radii", radii)

    @property
    def n(self) -> int:
        return len(self.joints)

    @property
    def lower(self) -> np.ndarray:
        return np.array([j.lower for j in self.joints])

    @property
    def upper(self) -> np.ndarray:
        return np.array([j.upper for j in self.joints])

    @property
    def limits(self) -> np.ndarray:
        return np.stack([self.lower, self.upper], axis=1)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def velocity_limits(self) -> np.ndarray:
        return np.array([j.velocity for j in self.joints])

    @property
    def acceleration_limits(self) -> np.ndarray:
        return np.array([j.acceleration for j in self.joints])

    def within_limits(self, q, strict: bool = False) -> bool:
        q = np.asarray(q)
        if strict:
            return bool(np.all(q > self.lower) and np.all(q < self.upper))
        return bool(np.all(q >= self.lower) and np.all(q <= self.upper))

    def with_base(self, base_pose: np.ndarray) -> "ManipulatorModel":
        return ManipulatorModel(
            self.name, self.joints, base_pose, self.sensor_offset, self.gripper,
            self.sensor_range, self.link_radii,
        )

    def reach_bound(self) -> float:
        """Upper bound on the distance from the base origin to the flange."""
        return float(sum(np.linalg.norm(j.origin[:3, 3]) for j in self.joints))


# ---------------------------------------------------------------------------
# scene


@dataclass(frozen=True)
class Hole:
    position: np.ndarray  # in the object frame, on the top face (m)
    diameter: float
    depth: float
    chamfer: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", _frozen(np.asarray(self.position, dtype=float).reshape(3)))
        if self.diameter <= 0 or self.depth <= 0:
            raise ValueError("hole diameter and depth must be positive")


@dataclass(frozen=True)
class SceneObject:
    """Primitive-shape object. Box ``extents`` are full edge lengths;
    cylinders use ``radius``/``length`` along the object z axis. The object
    frame sits at the center of the bottom face."""

    name: str
    kind: str
    pose: Pose
    extents: Optional[np.ndarray] = None
    radius: Optional[float] = None
    length: Optional[float] = None
    holes: Tuple[Hole, ...] = ()

    def __post_init__(self):
        if self.kind not in ("table", "stick", "pin", "obstacle"):
            raise ValueError(f"unknown object kind {self.kind!r}")
        if self.extents is not None:
            ext = np.asarray(self.extents, dtype=float).reshape(3)
            if np.any(ext <= 0):
                raise ValueError(f"{self.name}: box extents must be positive")
            object.__setattr__(self, "extents", _frozen(ext))
        elif self.radius is None or self.length is None:
            raise ValueError(f"{self.name}: needs box extents or cylinder radius/length")
        object.__setattr__(self, "holes", tuple(self.holes))

    @property
    def height(self) -> float:
        return float(self.extents[2]) if self.extents is not None else float(self.length)

    def with_pose(self, pose: Pose) -> "SceneObject":
        return SceneObject(self.name, self.kind, pose, self.extents, self.radius, self.length, self.holes)


@dataclass(frozen=True)
class NoiseModel:
    """Perception noise. Bounds are per-axis; ``distribution`` is
    ``uniform`` (within bounds) or ``gaussian`` (clipped to bounds)."""

    position_bound: float = 0.0
    orientation_bound: float = 0.0
    position_sigma: float = 0.0
    orientation_sigma: float = 0.0
    distribution: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if min(self.position_bound, self.orientation_bound, self.position_sigma, self.orientation_sigma) < 0:
            raise ValueError("noise bounds and sigmas must be non-negative")
        if self.distribution not in ("uniform", "gaussian"):
            raise ValueError(f"unknown noise distribution {self.distribution!r}")


def _draw(rng: np.random.Generator, bound: float, sigma: float, distribution: str) -> np.ndarray:
    if bound == 0.0:
        return np.zeros(3)
    if distribution == "uniform":
        return rng.uniform(-bound, bound, size=3)
    return np.clip(rng.normal(0.0, sigma or bound / 2.0, size=3), -bound, bound)


def perturb_pose(pose: Pose, noise: NoiseModel, rng: np.random.Generator) -> Pose:
    """Return a noisy copy of ``pose``; each position axis and each
    rotation-vector component stays within the configured bound."""
    dp = _draw(rng, noise.position_bound, noise.position_sigma, noise.distribution)
    dr = _draw(rng, noise.orientation_bound, noise.orientation_sigma, noise.distribution)
    if not dp.any() and not dr.any():
        return pose
    R = Rotation.from_rotvec(dr) * Rotation.from_quat(pose.quaternion)
    return Pose(pose.position + dp, R.as_quat())


# ---------------------------------------------------------------------------
# config files


def read_config(path) -> Dict[str, Any]:
    """Parse a JSON or TOML config file and check its version field."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: file not found")
    text = path.read_text()
    try:
        if path.suffix.lower() == ".toml":
            data = tomllib.loads(text)
        else:
            data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a table/object")
    if "version" not in data:
        raise ConfigError(f"{path}: missing required field 'version'")
    if data["version"] != CONFIG_VERSION:
        raise ConfigError(f"{path}: unsupported config version {data['version']!r}")
    return data


def _req(d: Dict[str, Any], key: str, ctx: str):
    if key not in d:
        raise ConfigError(f"{ctx}: missing field '{key}'")
    return d[key]


def _transform_from(d: Optional[Dict[str, Any]], ctx: str) -> np.ndarray:
    if d is None:
        return np.eye(4)
    xyz = quantity(d.get("xyz", {"value": [0, 0, 0], "unit": "m"}), "length", f"{ctx}.xyz")
    if "quat" in d:
        quat = np.asarray(d["quat"], dtype=float)
        if quat.shape != (4,) or not np.isfinite(quat).all() or np.linalg.norm(quat) == 0:
            raise ConfigError(f"{ctx}.quat: expected a nonzero [x, y, z, w]")
        return make_transform(Rotation.from_quat(quat).as_matrix(), xyz)
    rpy = quantity(d.get("rpy", {"value": [0, 0, 0], "unit": "rad"}), "angle", f"{ctx}.rpy")
    return make_transform(rpy_matrix(rpy), xyz)


def _transform_to(T: np.ndarray) -> Dict[str, Any]:
    quat = Rotation.from_matrix(T[:3, :3]).as_quat()
    return {"xyz": tagged(T[:3, 3].copy(), "length"), "quat": [float(v) for v in quat]}


def gripper_from_dict(d: Dict[str, Any], ctx: str = "gripper") -> GripperSpec:
    rng = quantity(_req(d, "force_range", ctx), "force", f"{ctx}.force_range")
    return GripperSpec(
        max_opening=quantity(_req(d, "max_opening", ctx), "length", f"{ctx}.max_opening"),
        force_range=(float(rng[0]), float(rng[1])),
        height_delta=quantity(_req(d, "height_delta", ctx), "length", f"{ctx}.height_delta"),
        compliant_tip=bool(d.get("compliant_tip", True)),
        tcp_length=quantity(d.get("tcp_length", "150 mm"), "length", f"{ctx}.tcp_length"),
        pad_width=quantity(d.get("pad_width", "22 mm"), "length", f"{ctx}.pad_width"),
        tip_force_limit=quantity(d.get("tip_force_limit", "15 N"), "force", f"{ctx}.tip_force_limit"),
    )


def gripper_to_dict(g: GripperSpec) -> Dict[str, Any]:
    return {
        "max_opening": tagged(g.max_opening, "length"),
        "force_range": tagged(np.array(g.force_range), "force"),
        "height_delta": tagged(g.height_delta, "length"),
        "compliant_tip": g.compliant_tip,
        "tcp_length": tagged(g.tcp_length, "length"),
        "pad_width": tagged(g.pad_width, "length"),
        "tip_force_limit": tagged(g.tip_force_limit, "force"),
    }


def model_from_dict(data: Dict[str, Any], ctx: str = "robot") -> ManipulatorModel:
    joints: List[JointSpec] = []
    for i, jd in enumerate(_req(data, "joints", ctx)):
        jctx = f"{ctx}.joints[{i}]"
        limits = quantity(_req(jd, "limits", jctx), "angle", f"{jctx}.limits")
        if np.size(limits) != 2:
            raise ConfigError(f"{jctx}.limits: expected [lower, upper]")
        try:
            joints.append(JointSpec(
                name=str(jd.get("name", f"j{i + 1}")),
                axis=np.asarray(_req(jd, "axis", jctx), dtype=float),
                origin=_transform_from(jd.get("origin"), f"{jctx}.origin"),
                lower=float(limits[0]),
                upper=float(limits[1]),
                velocity=quantity(_req(jd, "velocity", jctx), "angvel", f"{jctx}.velocity"),
                acceleration=quantity(_req(jd, "acceleration", jctx), "angacc", f"{jctx}.acceleration"),
            ))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{jctx}: {exc}") from None
    sensor = data.get("sensor", {})
    srange = SensorRange(
        force=quantity(sensor.get("force_range", {"value": [32, 32, 100], "unit": "N"}), "force", f"{ctx}.sensor.force_range"),
        torque=quantity(sensor.get("torque_range", {"value": [2.5, 2.5, 2.5], "unit": "Nm"}), "torque", f"{ctx}.sensor.torque_range"),
    )
    radii = data.get("link_radii")
    try:
        return ManipulatorModel(
            name=str(_req(data, "name", ctx)),
            joints=tuple(joints),
            base_pose=_transform_from(data.get("base"), f"{ctx}.base"),
            sensor_offset=_transform_from(sensor.get("offset"), f"{ctx}.sensor.offset"),
            gripper=gripper_from_dict(data["gripper"], f"{ctx}.gripper") if "gripper" in data else GripperSpec(),
            sensor_range=srange,
            link_radii=tuple(quantity(radii, "length", f"{ctx}.link_radii")) if radii is not None else (),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{ctx}: {exc}") from None


def model_to_dict(model: ManipulatorModel) -> Dict[str, Any]:
    return {
        "version": CONFIG_VERSION,
        "name": model.name,
        "base": _transform_to(model.base_pose),
        "joints": [
            {
                "name": j.name,
                "axis": [float(a) for a in j.axis],
                "origin": _transform_to(j.origin),
                "limits": tagged(np.array([j.lower, j.upper]), "angle"),
                "velocity": tagged(j.velocity, "angvel"),
                "acceleration": tagged(j.acceleration, "angacc"),
            }
            for j in model.joints
        ],
        "sensor": {
            "offset": _transform_to(model.sensor_offset),
            "force_range": tagged(model.sensor_range.force.copy(), "force"),
            "torque_range": tagged(model.sensor_range.torque.copy(), "torque"),
        },
        "gripper": gripper_to_dict(model.gripper),
        "link_radii": tagged(np.array(model.link_radii), "length"),
    }


def load_model(path) -> ManipulatorModel:
    """Load and validate a robot description file (JSON or TOML)."""
    data = read_config(path)
    model = model_from_dict(data, ctx=str(path))
    if "gripper_file" in data:
        gpath = Path(path).parent / data["gripper_file"]
        model = ManipulatorModel(
            model.name, model.joints, model.base_pose, model.sensor_offset,
            load_gripper(gpath), model.sensor_range, model.link_radii,
        )
    return model


def save_model(model: ManipulatorModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


def load_gripper(path) -> GripperSpec:
    return gripper_from_dict(read_config(path), ctx=str(path))


def noise_from_dict(d: Dict[str, Any], ctx: str = "noise") -> NoiseModel:
    try:
        return NoiseModel(
            position_bound=quantity(d.get("position_bound", "0 m"), "length", f"{ctx}.position_bound"),
            orientation_bound=quantity(d.get("orientation_bound", "0 rad"), "angle", f"{ctx}.orientation_bound"),
            position_sigma=quantity(d.get("position_sigma", "0 m"), "length", f"{ctx}.position_sigma"),
            orientation_sigma=quantity(d.get("orientation_sigma", "0 rad"), "angle", f"{ctx}.orientation_sigma"),
            distribution=d.get("distribution", "uniform"),
            seed=int(d.get("seed", 0)),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{ctx}: {exc}") from None


def models_equal(a: ManipulatorModel, b: ManipulatorModel, tol: float = 1e-12) -> bool:
    """Field-by-field comparison used by the round-trip checks."""
    if a.name != b.name or a.n != b.n or a.gripper != b.gripper:
        return False
    mats = [(a.base_pose, b.base_pose), (a.sensor_offset, b.sensor_offset),
            (a.sensor_range.force, b.sensor_range.force), (a.sensor_range.torque, b.sensor_range.torque),
            (np.array(a.link_radii), np.array(b.link_radii))]
    for ja, jb in zip(a.joints, b.joints):
        if ja.name != jb.name or ja.kind != jb.kind:
            return False
        mats += [(ja.axis, jb.axis), (ja.origin, jb.origin),
                 (np.array([ja.lower, ja.upper, ja.velocity, ja.acceleration]),
                  np.array([jb.lower, jb.upper, jb.velocity, jb.acceleration]))]
    return all(np.allclose(x, y, atol=tol, rtol=0) for x, y in mats)


def data_path(name: str) -> Path:
    """Path of a reference config shipped with the package."""
    return Path(__file__).parent / "data" / name


def reference_model() -> ManipulatorModel:
    """The nominal six-axis arm (not vendor-exact)."""
    return load_model(data_path("vs060.json"))
