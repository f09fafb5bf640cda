"""Rotary grinding tool plant: contact force, motor dynamics, material removal, disc wear.

The plant is the label source for everything downstream. One call to
:func:`step_plant` advances it by a fixed step; the state object it returns is
a fresh value, the input state is never mutated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

MAX_PENETRATION = 5e-3  # m; deeper commands are clamped and flagged


class DomainError(ValueError):
    """Raised when an operation is called outside its mathematical domain."""


@dataclass(frozen=True)
class PlantParams:
    disc_radius: float = 0.012  # m
    no_load_speed: float = 3665.0  # rad/s (35,000 rpm)
    stall_torque: float = 0.045  # N*m
    rotor_time_constant: float = 0.05  # s
    contact_stiffness: float = 5e4  # N/m
    engagement_initial: float = 0.5
    engagement_floor: float = 0.2
    wear_volume_scale: float = 1e-6  # m^3
    removal_gain: float = 1e-19  # m^3/(N*m)
    contact_area: float = 1e-6  # m^2
    wear_enabled: bool = True

    def __post_init__(self):
        checks = {
            "disc_radius": self.disc_radius > 0,
            "no_load_speed": self.no_load_speed > 0,
            "stall_torque": self.stall_torque > 0,
            "rotor_time_constant": self.rotor_time_constant > 0,
            "contact_stiffness": self.contact_stiffness > 0,
            "engagement": 0 < self.engagement_floor <= self.engagement_initial < 2,
            "wear_volume_scale": self.wear_volume_scale > 0,
            "removal_gain": self.removal_gain > 0,
            "contact_area": self.contact_area > 0,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise DomainError(f"invalid plant parameters: {', '.join(bad)}")


# Material presets select (removal gain, wear volume scale). Steel wears the
# disc two orders of magnitude faster than aluminium.
MATERIALS: dict[str, dict[str, float]] = {
    "aluminium": {"removal_gain": 1e-19, "wear_volume_scale": 1e-6},
    "steel": {"removal_gain": 8e-19, "wear_volume_scale": 1.5e-9},
}


@dataclass(frozen=True)
class Workpiece:
    thickness: float = 3e-3  # h, m
    length: float = 0.12  # m
    grid_resolution: float = 1e-4  # m
    material_preset: str = "aluminium"
    feed_rate: float = 0.0  # m/s, 0 for fixed-point grinding
    disc_width: float = 1e-3  # w_d, m
    trial_duration: float = 10.0  # t_s, s
    origin_x: float = 0.34  # task-space x of the first depth cell, m
    surface_y: float = -0.10  # task-space y of the untouched surface, m

    def __post_init__(self):
        if self.thickness <= 0 or self.grid_resolution <= 0 or self.disc_width <= 0:
            raise DomainError("workpiece thickness, grid resolution and disc width must be > 0")
        if self.length < self.disc_width:
            raise DomainError("workpiece shorter than the disc footprint")
        if self.material_preset not in MATERIALS:
            raise DomainError(f"unknown material preset {self.material_preset!r}")

    @property
    def n_cells(self) -> int:
        return int(round(self.length / self.grid_resolution))

    @property
    def footprint_cells(self) -> int:
        return max(1, int(round(self.disc_width / self.grid_resolution)))

    def positions(self) -> np.ndarray:
        """Cell-centre positions along the workpiece, relative to its start."""
        return (np.arange(self.n_cells) + 0.5) * self.grid_resolution

    def footprint(self, x: float) -> slice:
        """Slice of depth cells under a disc centred at task-space ``x``."""
        m = self.footprint_cells
        centre = (x - self.origin_x) / self.grid_resolution
        start = int(math.floor(centre - m / 2 + 0.5))
        start = min(max(start, 0), self.n_cells - m)
        return slice(start, start + m)


def params_for(workpiece: Workpiece, base: PlantParams | None = None, **overrides) -> PlantParams:
    """Plant parameters with the workpiece's material preset applied."""
    base = base or PlantParams()
    return replace(base, **{**MATERIALS[workpiece.material_preset], **overrides})


@dataclass
class PlantState:
    time: float
    omega: float
    normal_force: float
    tangential_force: float
    engagement: float
    removed_volume: float
    depth_field: np.ndarray
    tool_position: tuple[float, float]
    removal_rate: float = 0.0
    pending_wear: float = 0.0  # removed volume not yet applied to the engagement
    clamped: bool = False
    flags: list[str] = field(default_factory=list)


def initial_state(params: PlantParams, workpiece: Workpiece,
                  tool_position: tuple[float, float] | None = None) -> PlantState:
    """Free-spinning tool with a fresh disc above an untouched workpiece."""
    if tool_position is None:
        tool_position = (workpiece.origin_x + workpiece.length / 2, workpiece.surface_y)
    return PlantState(
        time=0.0,
        omega=params.no_load_speed,
        normal_force=0.0,
        tangential_force=0.0,
        engagement=params.engagement_initial,
        removed_volume=0.0,
        depth_field=np.zeros(workpiece.n_cells),
        tool_position=tuple(tool_position),
    )


def motor_torque(omega: float, params: PlantParams) -> float:
    """Linear torque-speed curve: stall torque at rest, zero at no-load speed."""
    if omega < 0:
        raise DomainError(f"negative angular velocity {omega}")
    tau = params.stall_torque * (1.0 - omega / params.no_load_speed)
    return min(max(tau, 0.0), params.stall_torque)


def motor_speed(torque: float, params: PlantParams) -> float:
    """Inverse of :func:`motor_torque` on [0, stall_torque]."""
    if not 0.0 <= torque <= params.stall_torque:
        raise DomainError(f"torque {torque} outside [0, {params.stall_torque}]")
    return params.no_load_speed * (1.0 - torque / params.stall_torque)


def material_removal_rate(tangential_force: float, relative_speed: float,
                          params: PlantParams) -> float:
    """Removal rate k_t * F_t * v_r / A (m^3/s)."""
    if tangential_force < 0 or relative_speed < 0:
        raise DomainError("tangential force and relative speed must be >= 0")
    return params.removal_gain * tangential_force * relative_speed / params.contact_area


def wear_update(mu: float, delta_volume: float, params: PlantParams) -> float:
    """Exponential decay of the engagement coefficient toward its floor."""
    if delta_volume < 0:
        raise DomainError("removed volume increment must be >= 0")
    floor = params.engagement_floor
    return floor + (mu - floor) * math.exp(-delta_volume / params.wear_volume_scale)


def steady_speed(normal_force: float, engagement: float, params: PlantParams) -> float:
    """Torque-balance angular velocity for a held normal force (0 when stalled)."""
    load = engagement * normal_force * params.disc_radius
    if load >= params.stall_torque:
        return 0.0
    return motor_speed(load, params)


def preston_coefficient(state: PlantState, params: PlantParams) -> float:
    """Equivalent Preston k_p = k_t * mu for reporting."""
    return params.removal_gain * state.engagement


def step_plant(state: PlantState, tool_position: tuple[float, float], dt: float,
               params: PlantParams, workpiece: Workpiece) -> PlantState:
    """Advance the plant by ``dt`` with the tool held at ``tool_position``.

    Contact is a unilateral spring on the penetration of the tool below the
    mean surface height under the disc footprint. Forces are evaluated at the
    start of the step, disc wear from the previous step's removal is applied
    before them so that F_t = mu * F_n holds exactly in every state, the
    rotor relaxes exactly (exponential) toward its
    torque-balance speed, and the removed volume is spread uniformly over the
    footprint cells.
    """
    if dt <= 0:
        raise DomainError(f"dt must be > 0, got {dt}")
    if dt > params.rotor_time_constant / 5:
        raise DomainError(f"dt={dt} exceeds rotor_time_constant/5")

    x, y = float(tool_position[0]), float(tool_position[1])
    cells = workpiece.footprint(x)
    depth = state.depth_field.copy()
    surface = workpiece.surface_y - float(np.mean(depth[cells]))
    penetration = max(0.0, surface - y)
    flags = []
    if penetration > MAX_PENETRATION:
        penetration = MAX_PENETRATION
        flags.append("penetration_clamped")

    mu = state.engagement
    if params.wear_enabled and state.pending_wear > 0:
        mu = wear_update(mu, state.pending_wear, params)
    f_n = params.contact_stiffness * penetration
    f_t = mu * f_n

    target = steady_speed(f_n, mu, params)
    decay = math.exp(-dt / params.rotor_time_constant)
    omega = target + (state.omega - target) * decay
    omega = min(max(omega, 0.0), params.no_load_speed)

    v_r = params.disc_radius * state.omega
    mrr = material_removal_rate(f_t, v_r, params)
    removed = mrr * dt
    n = cells.stop - cells.start
    depth[cells] += removed / (workpiece.thickness * workpiece.grid_resolution * n)

    return PlantState(
        time=state.time + dt,
        omega=omega,
        normal_force=f_n,
        tangential_force=f_t,
        engagement=mu,
        removed_volume=state.removed_volume + removed,
        depth_field=depth,
        tool_position=(x, y),
        removal_rate=mrr,
        pending_wear=removed,
        clamped=bool(flags),
        flags=flags,
    )


def load_plant_config(path) -> PlantParams:
    """Read a flat ``key = value`` file into :class:`PlantParams`."""
    from .config import read_flat, section

    return PlantParams(**section(read_flat(path), "plant", PlantParams))


def export_depth_csv(workpiece: Workpiece, depth_field: np.ndarray, path) -> None:
    data = np.column_stack([workpiece.positions(), depth_field])
    np.savetxt(path, data, delimiter=",", header="position_m,depth_m", comments="", fmt="%.9e")
