"""Forward/inverse kinematics, geometric Jacobian and sensor-frame motion.

All routines accept a single configuration ``q`` of shape ``(n,)`` or a
batch of shape ``(..., n)``; batch versions are what the workspace and
excitation code use, the scalar wrappers exist for readability.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import JointState, ManipulatorModel, Pose, invert_transform

IK_DAMPING = 1e-3
IK_MAX_ITER = 200
IK_MAX_STEP = 0.2
IK_POS_TOL = 1e-5
IK_ROT_TOL = 1e-5


class JointLimitError(ValueError):
    pass


class IKError(RuntimeError):
    """Inverse kinematics did not converge."""


def _axis_rotation(axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Rodrigues rotation about a fixed unit axis for a batch of angles."""
    x, y, z = axis
    K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    s = np.sin(angle)[..., None, None]
    c = np.cos(angle)[..., None, None]
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def _tool_transform(model: ManipulatorModel, frame: str) -> np.ndarray:
    if frame == "flange":
        return np.eye(4)
    if frame == "sensor":
        return np.asarray(model.sensor_offset)
    if frame == "tcp":
        T = np.array(model.sensor_offset)
        T[:3, 3] += T[:3, 2] * model.gripper.tcp_length
        return T
    raise ValueError(f"unknown frame {frame!r}")


def _rmat(R: np.ndarray, K: np.ndarray) -> np.ndarray:
    """``R @ K`` for a stack of 3x3 ``R`` and one constant matrix/vector."""
    flat = R.reshape(-1, 3) @ K
    return flat.reshape(R.shape[:-1] + K.shape[1:]) if K.ndim == 2 else flat.reshape(R.shape[:-1])


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def _chain(model: ManipulatorModel, q):
    """Joint frame rotations ``(..., n+1, 3, 3)`` and origins ``(..., n+1, 3)``."""
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != model.n:
        raise ValueError(f"expected {model.n} joint values, got {q.shape[-1]}")
    batch = q.shape[:-1]
    Rs = np.empty(batch + (model.n + 1, 3, 3))
    ps = np.empty(batch + (model.n + 1, 3))
    base = np.asarray(model.base_pose)
    R = np.empty(batch + (3, 3))
    R[...] = base[:3, :3]
    p = np.empty(batch + (3,))
    p[...] = base[:3, 3]
    Rs[..., 0, :, :] = R
    ps[..., 0, :] = p
    for j, joint in enumerate(model.joints):
        p = p + _rmat(R, joint.origin[:3, 3])
        R = _rmat(R, joint.origin[:3, :3])
        x, y, z = joint.axis
        if joint.kind == "revolute":
            K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
            s = np.sin(q[..., j])[..., None, None]
            c = np.cos(q[..., j])[..., None, None]
            # R @ (I + s K + (1 - c) K^2) with constant K
            R = R + s * _rmat(R, K) + (1.0 - c) * _rmat(R, K @ K)
        else:
            p = p + _rmat(R, joint.axis) * q[..., j][..., None]
        Rs[..., j + 1, :, :] = R
        ps[..., j + 1, :] = p
    return Rs, ps


def joint_frames(model: ManipulatorModel, q) -> np.ndarray:
    """World transforms of every joint frame after its motion.

    Returns shape ``(..., n + 1, 4, 4)``: index 0 is the base, index j the
    frame of joint j (whose origin is the joint location).
    """
    Rs, ps = _chain(model, q)
    frames = np.zeros(Rs.shape[:-2] + (4, 4))
    frames[..., :3, :3] = Rs
    frames[..., :3, 3] = ps
    frames[..., 3, 3] = 1.0
    return frames


def _end_and_jacobian(model: ManipulatorModel, q, tool: np.ndarray, rows: int = 6):
    Rs, ps = _chain(model, q)
    R_end = _rmat(Rs[..., -1, :, :], tool[:3, :3])
    p_end = ps[..., -1, :] + _rmat(Rs[..., -1, :, :], tool[:3, 3])
    J = np.zeros(np.shape(q)[:-1] + (rows, model.n))
    for j, joint in enumerate(model.joints):
        axis = _rmat(Rs[..., j + 1, :, :], joint.axis)
        if joint.kind == "revolute":
            J[..., :3, j] = _cross(axis, p_end - ps[..., j + 1, :])
            if rows == 6:
                J[..., 3:, j] = axis
        else:
            J[..., :3, j] = axis
    return R_end, p_end, J


def fk_matrix(model: ManipulatorModel, q, frame: str = "flange") -> np.ndarray:
    return joint_frames(model, q)[..., -1, :, :] @ _tool_transform(model, frame)


def forward_kinematics(model: ManipulatorModel, q, frame: str = "flange", strict: bool = False) -> Pose:
    """Pose of the flange (or ``sensor`` / ``tcp`` frame) in the world."""
    q = np.asarray(q, dtype=float)
    if strict and not model.within_limits(q):
        raise JointLimitError(f"configuration {q} outside joint limits")
    return Pose.from_matrix(fk_matrix(model, q, frame))


def jacobian(model: ManipulatorModel, q, frame: str = "flange") -> np.ndarray:
    """Geometric Jacobian, rows ``[v; omega]`` in the world frame, taken at
    the origin of ``frame``. Shape ``(..., 6, n)``."""
    return _end_and_jacobian(model, q, _tool_transform(model, frame))[2]


@dataclass(frozen=True)
class SensorKinematics:
    """Motion of the sensor frame O_s, all vectors expressed in O_s.

    ``a`` is the linear acceleration of the frame origin minus gravity, so a
    robot at rest reads ``-gravity`` rotated into the sensor frame.
    """

    a: np.ndarray
    omega: np.ndarray
    domega: np.ndarray
    v: np.ndarray


def sensor_kinematics_batch(model: ManipulatorModel, q, qd, qdd, gravity=(0.0, 0.0, -9.80665)):
    """Vectorised forward recursion over a batch of states.

    Returns ``(a, omega, domega, v, R)`` with leading batch shape; ``R`` is
    the world orientation of the sensor frame.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    qdd = np.asarray(qdd, dtype=float)
    batch = q.shape[:-1]
    Rs, ps = _chain(model, q)
    w = np.zeros(batch + (3,))
    dw = np.zeros(batch + (3,))
    v = np.zeros(batch + (3,))
    a = np.zeros(batch + (3,))
    p_prev = ps[..., 0, :]
    for j, joint in enumerate(model.joints):
        p = ps[..., j + 1, :]
        r = p - p_prev
        # propagate the rigid motion of the previous body to this origin
        v = v + _cross(w, r)
        a = a + _cross(dw, r) + _cross(w, _cross(w, r))
        z = _rmat(Rs[..., j + 1, :, :], joint.axis)
        if joint.kind == "revolute":
            dw = dw + z * qdd[..., j, None] + _cross(w, z) * qd[..., j, None]
            w = w + z * qd[..., j, None]
        else:
            a = a + z * qdd[..., j, None] + 2.0 * _cross(w, z) * qd[..., j, None]
            v = v + z * qd[..., j, None]
        p_prev = p
    S = np.asarray(model.sensor_offset)
    R = _rmat(Rs[..., -1, :, :], S[:3, :3])
    r = _rmat(Rs[..., -1, :, :], S[:3, 3])
    v = v + _cross(w, r)
    a = a + _cross(dw, r) + _cross(w, _cross(w, r))
    RT = np.swapaxes(R, -1, -2)
    g = np.asarray(gravity, dtype=float)

    def local(x):
        return (RT @ x[..., None])[..., 0]

    return local(a - g), local(w), local(dw), local(v), R


def sensor_kinematics(model: ManipulatorModel, state: JointState, gravity=(0.0, 0.0, -9.80665)) -> SensorKinematics:
    a, w, dw, v, _ = sensor_kinematics_batch(model, state.q, state.qd, state.qdd, gravity)
    return SensorKinematics(a=a, omega=w, domega=dw, v=v)


# ---------------------------------------------------------------------------
# inverse kinematics


def rotation_error(R_target: np.ndarray, R: np.ndarray) -> np.ndarray:
    """World-frame rotation vector taking ``R`` to ``R_target`` (batched)."""
    E = R_target @ np.swapaxes(R, -1, -2)
    tr = np.clip((np.trace(E, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(tr)
    vee = np.stack([E[..., 2, 1] - E[..., 1, 2], E[..., 0, 2] - E[..., 2, 0], E[..., 1, 0] - E[..., 0, 1]], axis=-1)
    s = np.sin(theta)
    small = s < 1e-6
    scale = np.where(small, 0.5, theta / (2.0 * np.where(small, 1.0, s)))
    out = vee * scale[..., None]
    # near pi the vee part vanishes; recover the axis from the symmetric part
    near_pi = small & (theta > 1.0)
    if np.any(near_pi):
        B = (E[near_pi] + np.eye(3)) / 2.0
        idx = np.argmax(np.diagonal(B, axis1=-2, axis2=-1), axis=-1)
        axes = B[np.arange(len(idx)), :, idx]
        axes /= np.linalg.norm(axes, axis=-1, keepdims=True)
        out[near_pi] = axes * theta[near_pi][..., None]
    return out


def solve_ik_batch(
    model: ManipulatorModel,
    targets: np.ndarray,
    seeds: np.ndarray,
    frame: str = "flange",
    damping: float = IK_DAMPING,
    max_iter: int = IK_MAX_ITER,
    max_step: float = IK_MAX_STEP,
    pos_tol: float = IK_POS_TOL,
    rot_tol: float = IK_ROT_TOL,
    position_only: bool = False,
    stall_window: int = 0,
):
    """Damped least-squares IK for many targets at once.

    Args:
        targets: ``(M, 4, 4)`` world transforms of ``frame``.
        seeds: ``(M, n)`` initial configurations.
        stall_window: when positive, rows whose error has not shrunk by 1%
            over this many iterations are abandoned as unconverged.

    Returns:
        ``(q, converged, iterations)``. Unconverged rows hold the last
        iterate. Iterates are clipped into the joint limits every step.
    """
    targets = np.asarray(targets, dtype=float)
    q = np.array(seeds, dtype=float)
    lo, hi = model.lower, model.upper
    q = np.clip(q, lo, hi)
    M = q.shape[0]
    done = np.zeros(M, dtype=bool)
    iters = np.zeros(M, dtype=int)
    active = np.arange(M)
    rows = 3 if position_only else 6
    lam2 = damping ** 2
    tool = _tool_transform(model, frame)
    checkpoint = np.full(M, np.inf)
    for it in range(max_iter + 1):
        if active.size == 0:
            break
        qa = q[active]
        R, p, J = _end_and_jacobian(model, qa, tool, rows)
        ep = targets[active, :3, 3] - p
        if position_only:
            err = ep
            ok = np.linalg.norm(ep, axis=1) < pos_tol
        else:
            er = rotation_error(targets[active, :3, :3], R)
            err = np.concatenate([ep, er], axis=1)
            ok = (np.linalg.norm(ep, axis=1) < pos_tol) & (np.linalg.norm(er, axis=1) < rot_tol)
        done[active[ok]] = True
        iters[active[ok]] = it
        keep = ~ok
        if stall_window > 0 and it > 0 and it % stall_window == 0:
            enorm = np.linalg.norm(err, axis=1)
            stalled = keep & (enorm > 0.99 * checkpoint[active])
            iters[active[stalled]] = it
            checkpoint[active] = enorm
            keep &= ~stalled
        if it == max_iter:
            iters[active[keep]] = it
            break
        active = active[keep]
        if active.size == 0:
            break
        qa = qa[keep]
        err = err[keep]
        J = J[keep]
        Jt = np.swapaxes(J, 1, 2)
        JJt = J @ Jt + lam2 * np.eye(rows)
        dq = (Jt @ np.linalg.solve(JJt, err[..., None]))[..., 0]
        big = np.max(np.abs(dq), axis=1)
        scale = np.where(big > max_step, max_step / np.maximum(big, 1e-300), 1.0)
        q[active] = np.clip(qa + dq * scale[:, None], lo, hi)
    return q, done, iters


def inverse_kinematics(
    model: ManipulatorModel,
    target: Pose,
    seed,
    frame: str = "flange",
    **kwargs,
) -> np.ndarray:
    """Joint configuration reaching ``target`` within 1e-5 m / 1e-5 rad.

    Raises:
        JointLimitError: seed outside the joint limits.
        IKError: no convergence within the iteration budget.
    """
    seed = np.asarray(seed, dtype=float)
    if not model.within_limits(seed):
        raise JointLimitError("IK seed outside joint limits")
    q, ok, iters = solve_ik_batch(model, target.matrix()[None], seed[None], frame=frame, **kwargs)
    if not ok[0]:
        raise IKError(f"IK did not converge after {iters[0]} iterations")
    return q[0]


def world_to_base(model: ManipulatorModel, points: np.ndarray) -> np.ndarray:
    Tinv = invert_transform(np.asarray(model.base_pose))
    return points @ Tinv[:3, :3].T + Tinv[:3, 3]
