"""Position-based explicit force control around an ideal position servo.

Conventions: ``f_r`` and ``f_s`` are forces applied *by the tool on the
environment* (pressing down on a table is ``(0, 0, -f)``), the force error
is ``f_e = f_r - f_s`` and the command is ``x_c = x_r + sum(x_f)``: each
compensator output is added to an accumulated offset, which gives the loop
its integral-like action.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Union

import numpy as np

from .model import Wrench

DEFAULT_DT = 1e-3
DEFAULT_KP = 5e-6  # m/N
DEFAULT_KV = 2e-10  # m s/N
DEFAULT_CUTOFF = 10.0  # Hz
SAFETY_BOUND = 0.5  # m


class DivergenceError(RuntimeError):
    def __init__(self, step: int, value: float):
        self.step = step
        super().__init__(f"force loop diverged at step {step}: |offset| = {value:.3g} m")


class NoContactError(RuntimeError):
    pass


def _vec3(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    return np.full(3, float(a)) if a.ndim == 0 else a.reshape(3)


@dataclass(frozen=True)
class ForceControllerState:
    kp: np.ndarray = field(default_factory=lambda: np.full(3, DEFAULT_KP))
    kv: np.ndarray = field(default_factory=lambda: np.full(3, DEFAULT_KV))
    dt: float = DEFAULT_DT
    cutoff_hz: float = DEFAULT_CUTOFF
    prev_error: np.ndarray = field(default_factory=lambda: np.zeros(3))
    derivative: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "kp", _vec3(self.kp))
        object.__setattr__(self, "kv", _vec3(self.kv))
        object.__setattr__(self, "prev_error", _vec3(self.prev_error))
        object.__setattr__(self, "derivative", _vec3(self.derivative))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if np.any(self.kp < 0) or np.any(self.kv < 0):
            raise ValueError("gains must be non-negative")
        if not self.cutoff_hz > 0:
            raise ValueError("filter cutoff must be positive")

    @property
    def alpha(self) -> float:
        """Pole of the first-order derivative filter."""
        tau = 1.0 / (2.0 * math.pi * self.cutoff_hz)
        return tau / (tau + self.dt)

    def reset(self) -> "ForceControllerState":
        return replace(self, prev_error=np.zeros(3), derivative=np.zeros(3))


def compensator_step(state: ForceControllerState, f_r: Wrench, f_s: Wrench):
    """One sample of ``x_f = k_p f_e + k_v d/dt f_e`` (filtered derivative).

    Returns ``(x_f, new_state)``; the input state is not modified.
    """
    fe = np.asarray(f_r.force) - np.asarray(f_s.force)
    raw = (fe - state.prev_error) / state.dt
    a = state.alpha
    d = a * state.derivative + (1.0 - a) * raw
    x_f = state.kp * fe + state.kv * d
    return x_f, replace(state, prev_error=fe, derivative=d)


Surface = Union[None, float, Callable[[np.ndarray], float]]


@dataclass
class ContactEnvironment:
    """Penalty contact against a horizontal support.

    ``surface`` is a height (m), a callable mapping the tool point to the
    local support height (``-inf`` for none), or ``None`` for free space.
    """

    stiffness: float
    surface: Surface = 0.0
    in_contact: bool = False

    def __post_init__(self):
        if not self.stiffness > 0:
            raise ValueError("environment stiffness must be positive")

    def height(self, p: np.ndarray) -> float:
        if self.surface is None:
            return -math.inf
        if callable(self.surface):
            return float(self.surface(p))
        return float(self.surface)

    def penetration(self, p) -> float:
        p = np.asarray(p, dtype=float)
        return max(0.0, self.height(p) - float(p[2]))


def environment_force(env: ContactEnvironment, tool_position) -> Wrench:
    """Force the tool exerts on the environment (normal only)."""
    pen = env.penetration(tool_position)
    env.in_contact = pen > 0.0
    return Wrench(np.array([0.0, 0.0, -env.stiffness * pen]), np.zeros(3), frame="world")


@dataclass
class LoopTrace:
    dt: float
    t: List[float] = field(default_factory=list)
    x_r: List[np.ndarray] = field(default_factory=list)
    x_c: List[np.ndarray] = field(default_factory=list)
    x_f: List[np.ndarray] = field(default_factory=list)
    f_s: List[np.ndarray] = field(default_factory=list)
    f_e: List[np.ndarray] = field(default_factory=list)

    def append(self, t, x_r, x_c, x_f, f_s, f_e):
        self.t.append(float(t))
        self.x_r.append(np.array(x_r, dtype=float))
        self.x_c.append(np.array(x_c, dtype=float))
        self.x_f.append(np.array(x_f, dtype=float))
        self.f_s.append(np.array(f_s, dtype=float))
        self.f_e.append(np.array(f_e, dtype=float))

    def __len__(self) -> int:
        return len(self.t)

    def arrays(self):
        return {k: np.array(getattr(self, k)) for k in ("t", "x_r", "x_c", "x_f", "f_s", "f_e")}

    def extend(self, other: "LoopTrace", t0: float = 0.0) -> None:
        for k in range(len(other)):
            self.append(t0 + other.t[k], other.x_r[k], other.x_c[k], other.x_f[k], other.f_s[k], other.f_e[k])

    def write_csv(self, path) -> None:
        cols = ["t"]
        for name in ("x_r", "x_c", "x_f", "f_s", "f_e"):
            cols += [f"{name}_{ax}" for ax in "xyz"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for k in range(len(self)):
                row = np.concatenate([[self.t[k]], self.x_r[k], self.x_c[k], self.x_f[k], self.f_s[k], self.f_e[k]])
                w.writerow([f"{v:.9g}" for v in row])


class ForceLoop:
    """Closed loop of compensator, ideal (or lagged) position servo and a
    contact environment, stepped one sample at a time.

    Args:
        position: initial tool position, also the servo's initial command.
        lag: optional first-order servo time constant (s); 0 is ideal
            one-step tracking.
        accumulate: add each ``x_f`` to a running offset (default). When
            false the command is ``x_r + x_f`` (proportional only).
        axes: mask of axes on which the compensator acts.
        constraint: optional map from the servoed position to the position
            the environment allows (e.g. a peg held laterally by a hole).
        on_read: called once per force sample (instrumentation).
    """

    def __init__(self, controller: ForceControllerState, env: ContactEnvironment, position,
                 lag: float = 0.0, accumulate: bool = True, axes=(False, False, True),
                 safety_bound: float = SAFETY_BOUND, trace: Optional[LoopTrace] = None,
                 constraint: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 on_read: Optional[Callable[[], None]] = None):
        self.state = controller.reset()
        self.env = env
        self.position = np.array(position, dtype=float)
        self.offset = np.zeros(3)
        self.lag = lag
        self.accumulate = accumulate
        self.mask = np.asarray(axes, dtype=float)
        self.safety_bound = safety_bound
        self.trace = trace if trace is not None else LoopTrace(controller.dt)
        self.steps = 0
        self.constraint = constraint
        self.on_read = on_read
        self.force = self._sense()

    def _sense(self) -> Wrench:
        if self.on_read is not None:
            self.on_read()
        return environment_force(self.env, self.position)

    @property
    def dt(self) -> float:
        return self.state.dt

    @property
    def time(self) -> float:
        return self.steps * self.dt

    def read_force(self) -> Wrench:
        return self.force

    def step(self, x_r, f_r: Wrench) -> np.ndarray:
        x_r = np.asarray(x_r, dtype=float)
        f_s = self.force
        x_f, self.state = compensator_step(self.state, f_r, f_s)
        x_f = x_f * self.mask
        if self.accumulate:
            self.offset = self.offset + x_f
            x_c = x_r + self.offset
        else:
            x_c = x_r + x_f
        size = float(np.max(np.abs(self.offset if self.accumulate else x_f)))
        if not math.isfinite(size) or size > self.safety_bound:
            raise DivergenceError(self.steps, size)
        if self.lag > 0:
            b = self.dt / (self.lag + self.dt)
            self.position = self.position + b * (x_c - self.position)
        else:
            self.position = x_c.copy()
        if self.constraint is not None:
            self.position = np.asarray(self.constraint(self.position), dtype=float)
        self.trace.append(self.time, x_r, x_c, x_f, f_s.force, f_r.force - f_s.force)
        self.steps += 1
        self.force = self._sense()
        return self.position


def _reference(x_r, k: int, dt: float) -> np.ndarray:
    if callable(x_r):
        return np.asarray(x_r(k * dt), dtype=float)
    x_r = np.asarray(x_r, dtype=float)
    return x_r if x_r.ndim == 1 else x_r[min(k, len(x_r) - 1)]


def simulate_contact_loop(controller: ForceControllerState, env: ContactEnvironment, x_r, f_r: Wrench,
                          duration: float, lag: float = 0.0, accumulate: bool = True,
                          axes=(False, False, True)) -> LoopTrace:
    """Run the loop for ``duration`` seconds.

    ``x_r`` may be a constant 3-vector, a ``(K, 3)`` array (held at its
    last row) or a callable of time.
    """
    steps = int(round(duration / controller.dt))
    if steps < 10:
        raise ValueError("duration must cover at least 10 samples")
    loop = ForceLoop(controller, env, _reference(x_r, 0, controller.dt), lag, accumulate, axes)
    for k in range(steps):
        loop.step(_reference(x_r, k, controller.dt), f_r)
    return loop.trace


def guarded_move(controller: ForceControllerState, env: ContactEnvironment, start, direction,
                 speed: float, stop_force: float, travel_limit: float = 0.3,
                 sensor_limit: Optional[float] = None, on_read: Optional[Callable[[], None]] = None):
    """Advance in position mode until the force along ``direction`` reaches
    ``stop_force``.

    Returns ``(contact_position, trace)``. ``stop_force`` of 0 stops at the
    first sample with any contact force.
    """
    if stop_force < 0:
        raise ValueError("stop force must be non-negative")
    if sensor_limit is not None and stop_force > sensor_limit:
        raise ValueError(f"stop force {stop_force} N exceeds sensor range {sensor_limit} N")
    if not speed > 0:
        raise ValueError("speed must be positive")
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    dt = controller.dt
    p = np.array(start, dtype=float)
    trace = LoopTrace(dt)
    zero = np.zeros(3)
    steps = int(math.ceil(travel_limit / (speed * dt)))
    for k in range(steps + 1):
        if on_read is not None:
            on_read()
        f = environment_force(env, p)
        along = float(np.dot(f.force, u))
        trace.append(k * dt, p, p, zero, f.force, -f.force)
        hit = along > 0 if stop_force == 0 else along >= stop_force
        if hit:
            return p, trace
        p = p + u * speed * dt
    raise NoContactError(f"no contact within {travel_limit:.3f} m of travel")
