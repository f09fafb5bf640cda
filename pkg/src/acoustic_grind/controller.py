"""Hybrid force/position control of a planar 3R arm.

Task space is (x, y, phi). The selection matrix S picks the surface-normal
axis, which an admittance law drives from the force error; the complementary
directions I - S follow the path under PID. Damped least squares maps the
task velocity to joint rates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ArmModel:
    lengths: tuple[float, float, float] = (0.35, 0.30, 0.10)
    q: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity_limit: float = 2.0  # rad/s per joint

    def __post_init__(self):
        if any(l <= 0 for l in self.lengths):
            raise ValueError("link lengths must be > 0")
        self.q = np.asarray(self.q, dtype=float).copy()


def forward_kinematics(arm: ArmModel) -> np.ndarray:
    """End-effector pose (x, y, phi)."""
    angles = np.cumsum(arm.q)
    l = np.asarray(arm.lengths)
    return np.array([np.sum(l * np.cos(angles)), np.sum(l * np.sin(angles)), angles[-1]])


def jacobian(arm: ArmModel) -> np.ndarray:
    angles = np.cumsum(arm.q)
    l = np.asarray(arm.lengths)
    dx = -l * np.sin(angles)
    dy = l * np.cos(angles)
    # joint i moves every link from i outward
    J = np.empty((3, 3))
    J[0] = np.cumsum(dx[::-1])[::-1]
    J[1] = np.cumsum(dy[::-1])[::-1]
    J[2] = 1.0
    return J


def inverse_kinematics(lengths, pose, elbow: int = -1) -> np.ndarray:
    """Closed-form joint angles reaching ``pose`` (x, y, phi)."""
    l1, l2, l3 = lengths
    x, y, phi = pose
    wx, wy = x - l3 * math.cos(phi), y - l3 * math.sin(phi)
    c2 = (wx * wx + wy * wy - l1 * l1 - l2 * l2) / (2 * l1 * l2)
    if abs(c2) > 1:
        raise ValueError(f"pose {pose} out of reach")
    q2 = elbow * math.acos(c2)
    q1 = math.atan2(wy, wx) - math.atan2(l2 * math.sin(q2), l1 + l2 * math.cos(q2))
    return np.array([q1, q2, phi - q1 - q2])


def admittance_step(f_target: float, f_feedback: float, v_prev: float, dt: float,
                    inertia: float, damping: float) -> float:
    """Mass-damper admittance; positive output pushes into the surface."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    return v_prev + (dt / inertia) * ((f_target - f_feedback) - damping * v_prev)


@dataclass
class PIDState:
    integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    prev_error: np.ndarray | None = None


def pid_step(error, state: PIDState, dt: float, kp, ki, kd, integral_limit) -> np.ndarray:
    """Vector PID with clamped integral; derivative is a first difference of the error."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    error = np.asarray(error, dtype=float)
    state.integral = np.clip(state.integral + error * dt, -integral_limit, integral_limit)
    deriv = np.zeros_like(error) if state.prev_error is None else (error - state.prev_error) / dt
    state.prev_error = error.copy()
    return np.asarray(kp) * error + np.asarray(ki) * state.integral + np.asarray(kd) * deriv


def resolved_rate(J: np.ndarray, v_task: np.ndarray, damping: float,
                  velocity_limit: float = math.inf) -> tuple[np.ndarray, bool]:
    """Damped least squares q_dot = J^T (J J^T + lambda^2 I)^-1 v, then joint clamping."""
    v_task = np.asarray(v_task, dtype=float)
    A = J @ J.T + damping ** 2 * np.eye(J.shape[0])
    qdot = J.T @ np.linalg.solve(A, v_task)
    peak = float(np.max(np.abs(qdot)))
    if peak > velocity_limit:
        # uniform scaling keeps the task direction
        return qdot * (velocity_limit / peak), True
    return qdot, False


def selection_matrix(normal_axis: int = 1) -> np.ndarray:
    S = np.zeros((3, 3))
    S[normal_axis, normal_axis] = 1.0
    return S


@dataclass
class ControllerConfig:
    S: np.ndarray = field(default_factory=selection_matrix)
    normal: tuple[float, float, float] = (0.0, -1.0, 0.0)  # into the surface
    admittance_inertia: float = 4500.0  # N*s^2/m
    admittance_damping: float = 90000.0  # N*s/m
    kp: tuple[float, float, float] = (4.0, 4.0, 4.0)
    ki: tuple[float, float, float] = (1.0, 1.0, 1.0)
    kd: tuple[float, float, float] = (0.0, 0.0, 0.0)
    integral_limit: float = 0.01
    dls_damping: float = 0.01
    control_rate: float = 20.0

    def __post_init__(self):
        S = np.asarray(self.S, dtype=float)
        if S.shape != (3, 3) or not np.allclose(S @ S, S) or not np.allclose(S, S.T):
            raise ValueError("S must be a symmetric idempotent 3x3 matrix")
        if self.admittance_inertia <= 0 or self.admittance_damping <= 0:
            raise ValueError("admittance inertia and damping must be > 0")
        self.S = S


@dataclass
class ControlCommand:
    joint_velocity: np.ndarray
    task_velocity: np.ndarray
    saturated: bool = False
    fault: bool = False


@dataclass
class HybridController:
    config: ControllerConfig = field(default_factory=ControllerConfig)
    v_normal: float = 0.0
    pid: PIDState = field(default_factory=PIDState)
    faulted: bool = False

    def step(self, f_target: float, f_feedback: float, feedback_time: float, now: float,
             pose: np.ndarray, reference: np.ndarray, ref_velocity: np.ndarray,
             arm: ArmModel) -> ControlCommand:
        """One control tick: force along S, PID along I - S, DLS to joint rates."""
        cfg = self.config
        dt = 1.0 / cfg.control_rate
        if now - feedback_time > 2.0 / cfg.control_rate + 1e-9:
            self.faulted = True
            self.v_normal = 0.0
            return ControlCommand(np.zeros(3), np.zeros(3), fault=True)

        self.v_normal = admittance_step(f_target, f_feedback, self.v_normal, dt,
                                        cfg.admittance_inertia, cfg.admittance_damping)
        I = np.eye(3)
        force_branch = cfg.S @ (self.v_normal * np.asarray(cfg.normal))
        error = np.asarray(reference, dtype=float) - np.asarray(pose, dtype=float)
        error[2] = math.remainder(error[2], 2 * math.pi)
        free = I - cfg.S
        # only errors along the position-controlled directions feed the PID
        v_pid = pid_step(free @ error, self.pid, dt, cfg.kp, cfg.ki, cfg.kd,
                         cfg.integral_limit) + np.asarray(ref_velocity, dtype=float)
        position_branch = free @ v_pid
        v = force_branch + position_branch
        qdot, saturated = resolved_rate(jacobian(arm), v, cfg.dls_damping, arm.velocity_limit)
        return ControlCommand(qdot, v, saturated=saturated)


def hybrid_step(f_hat: float, pose: np.ndarray, reference: np.ndarray, ref_velocity: np.ndarray,
                controller: HybridController, arm: ArmModel, f_target: float,
                feedback_time: float = 0.0, now: float = 0.0) -> ControlCommand:
    return controller.step(f_target, f_hat, feedback_time, now, pose, reference,
                           ref_velocity, arm)
