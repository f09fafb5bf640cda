import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from acoustic_grind.plant import (
    MATERIALS, DomainError, PlantParams, Workpiece, initial_state, material_removal_rate,
    motor_speed, motor_torque, params_for, steady_speed, step_plant, wear_update,
    export_depth_csv, load_plant_config,
)

P = PlantParams()
WP = Workpiece()
DT = 0.005


def hold(state, depth_below_surface, steps, params=P, wp=WP):
    x = state.tool_position[0]
    for _ in range(steps):
        surface = wp.surface_y - float(np.mean(state.depth_field[wp.footprint(x)]))
        state = step_plant(state, (x, surface - depth_below_surface), DT, params, wp)
    return state


def test_motor_torque_endpoints_and_midpoint():
    assert motor_torque(P.no_load_speed, P) == 0.0
    assert motor_torque(0.0, P) == P.stall_torque
    assert motor_torque(P.no_load_speed / 2, P) == pytest.approx(0.0225, abs=1e-15)


def test_motor_torque_rejects_negative_speed():
    with pytest.raises(DomainError):
        motor_torque(-1.0, P)


def test_motor_torque_strictly_decreasing():
    w = np.linspace(0, P.no_load_speed, 200)
    tau = [motor_torque(x, P) for x in w]
    assert np.all(np.diff(tau) < 0)


def test_motor_speed_round_trip():
    rng = np.random.default_rng(0)
    for w in rng.uniform(0, P.no_load_speed, 100):
        assert abs(motor_speed(motor_torque(w, P), P) - w) < 1e-12 * P.no_load_speed
    assert motor_speed(0.0, P) == P.no_load_speed
    assert motor_speed(P.stall_torque, P) == 0.0
    with pytest.raises(DomainError):
        motor_speed(P.stall_torque * 1.01, P)


def test_removal_rate_hand_value():
    params = PlantParams(removal_gain=2e-9, contact_area=1e-5)
    # 2e-9 * 1.5 * 30 / 1e-5
    assert material_removal_rate(1.5, 30.0, params) == pytest.approx(9.0e-3, rel=1e-12)
    assert material_removal_rate(0.0, 30.0, params) == 0.0
    assert material_removal_rate(3.0, 30.0, params) == pytest.approx(
        2 * material_removal_rate(1.5, 30.0, params), rel=1e-15)


def test_wear_update_law():
    mu0, floor = P.engagement_initial, P.engagement_floor
    assert wear_update(mu0, 0.0, P) == mu0
    assert wear_update(mu0, 1e3, P) == pytest.approx(floor, abs=1e-15)
    expected = floor + (mu0 - floor) / math.e
    assert wear_update(mu0, P.wear_volume_scale, P) == pytest.approx(expected, rel=1e-14)


@given(st.lists(st.floats(0, 5e-6), min_size=1, max_size=30))
def test_wear_is_monotone_and_bounded(increments):
    mu = P.engagement_initial
    for dv in increments:
        new = wear_update(mu, dv, P)
        assert P.engagement_floor <= new <= mu
        mu = new


def test_seven_newtons_nearly_stalls():
    w = steady_speed(7.0, 0.5, P)
    assert w == pytest.approx(P.no_load_speed * (1 - 0.042 / 0.045), rel=1e-12)
    assert w / P.no_load_speed == pytest.approx(0.0667, abs=1e-4)
    assert steady_speed(8.0, 0.5, P) == 0.0


def test_free_spinning_equilibrium():
    s = initial_state(P, WP)
    s = step_plant(s, (s.tool_position[0], WP.surface_y + 0.01), DT, P, WP)
    s = replace_omega(s, 1000.0)
    for _ in range(400):
        s = step_plant(s, (s.tool_position[0], WP.surface_y + 0.01), DT, P, WP)
    assert s.normal_force == 0.0
    assert s.omega == pytest.approx(P.no_load_speed, rel=1e-6)


def replace_omega(state, omega):
    state.omega = omega
    return state


def test_stall_when_load_exceeds_stall_torque():
    s = hold(initial_state(P, WP), 10.0 / P.contact_stiffness, 400)
    assert s.omega < 1e-9 * P.no_load_speed
    assert s.engagement * s.normal_force * P.disc_radius >= P.stall_torque


def test_step_rejects_bad_dt():
    s = initial_state(P, WP)
    with pytest.raises(DomainError):
        step_plant(s, s.tool_position, 0.0, P, WP)
    with pytest.raises(DomainError):
        step_plant(s, s.tool_position, P.rotor_time_constant, P, WP)


def test_state_invariants_and_conservation():
    params = params_for(Workpiece(material_preset="steel"))
    wp = Workpiece(material_preset="steel")
    s = initial_state(params, wp)
    x = s.tool_position[0]
    prev = s
    total = 0.0
    for _ in range(600):
        surface = wp.surface_y - float(np.mean(prev.depth_field[wp.footprint(x)]))
        s = step_plant(prev, (x, surface - 4.0 / params.contact_stiffness), DT, params, wp)
        assert s.normal_force >= 0 and s.tangential_force >= 0
        assert abs(s.tangential_force - s.engagement * s.normal_force) <= 1e-12 * max(s.tangential_force, 1e-30)
        assert 0.0 <= s.omega <= params.no_load_speed
        assert s.removed_volume >= prev.removed_volume
        assert np.all(s.depth_field >= prev.depth_field)
        added = np.sum(s.depth_field - prev.depth_field) * wp.thickness * wp.grid_resolution
        assert added == pytest.approx(s.removal_rate * DT, rel=1e-9)
        total += s.removal_rate * DT
        prev = s
    assert s.removed_volume == pytest.approx(total, rel=1e-6)
    assert s.engagement < params.engagement_initial


def test_omega_monotone_under_constant_force():
    params = replace_wear(P, False)
    s = initial_state(params, WP)
    ws = []
    for _ in range(200):
        s = hold(s, 3.0 / params.contact_stiffness, 1, params)
        ws.append(s.omega)
    assert s.normal_force == pytest.approx(3.0, rel=1e-9)
    assert np.all(np.diff(ws) <= 0)
    assert ws[-1] == pytest.approx(steady_speed(3.0, 0.5, params), rel=1e-3)


def replace_wear(params, enabled):
    from dataclasses import replace

    return replace(params, wear_enabled=enabled)


def test_fixed_tangential_force_gives_constant_rate_under_wear():
    # holding F_t = mu * F_n fixed (equivalently omega) keeps the removal rate constant
    params = params_for(Workpiece(material_preset="steel"))
    wp = Workpiece(material_preset="steel")
    s = initial_state(params, wp)
    x = s.tool_position[0]
    f_t = 1.5
    rates = []
    for k in range(3000):
        surface = wp.surface_y - float(np.mean(s.depth_field[wp.footprint(x)]))
        mu_next = wear_update(s.engagement, s.pending_wear, params)
        f_n = f_t / mu_next
        s = step_plant(s, (x, surface - f_n / params.contact_stiffness), DT, params, wp)
        if k >= 400:  # rotor transient has decayed by exp(-40)
            rates.append(s.removal_rate)
    assert s.engagement < 0.45
    rates = np.array(rates)
    assert np.max(np.abs(rates - rates[0])) <= 1e-9 * rates[0]


def test_fixed_normal_force_rate_decreases_under_wear():
    params = params_for(Workpiece(material_preset="steel"))
    wp = Workpiece(material_preset="steel")
    # at 3 N F_t stays below the F_t * omega maximum (F_t * r = stall torque / 2)
    s = hold(initial_state(params, wp), 3.0 / params.contact_stiffness, 100, params, wp)
    early = s.removal_rate
    s = hold(s, 3.0 / params.contact_stiffness, 3000, params, wp)
    assert s.removal_rate < 0.95 * early


def test_determinism():
    a = hold(initial_state(P, WP), 3e-5, 300)
    b = hold(initial_state(P, WP), 3e-5, 300)
    assert a.omega == b.omega and np.array_equal(a.depth_field, b.depth_field)


def test_penetration_clamped_and_flagged():
    s = initial_state(P, WP)
    s = step_plant(s, (s.tool_position[0], WP.surface_y - 0.02), DT, P, WP)
    assert s.clamped and "penetration_clamped" in s.flags
    assert s.normal_force == pytest.approx(P.contact_stiffness * 5e-3)


def test_invalid_params_rejected():
    with pytest.raises(DomainError):
        PlantParams(engagement_floor=0.6)
    with pytest.raises(DomainError):
        PlantParams(disc_radius=0.0)
    with pytest.raises(DomainError):
        Workpiece(material_preset="wood")


def test_material_presets():
    steel = params_for(Workpiece(material_preset="steel"))
    alu = params_for(Workpiece(material_preset="aluminium"))
    assert steel.wear_volume_scale < alu.wear_volume_scale
    assert steel.removal_gain == MATERIALS["steel"]["removal_gain"]


def test_config_and_csv_round_trip(tmp_path):
    cfg = tmp_path / "plant.cfg"
    cfg.write_text("plant.disc_radius = 0.015\nplant.stall_torque = 0.05\n")
    params = load_plant_config(cfg)
    assert params.disc_radius == 0.015 and params.stall_torque == 0.05
    depth = np.linspace(0, 1e-4, WP.n_cells)
    export_depth_csv(WP, depth, tmp_path / "d.csv")
    data = np.loadtxt(tmp_path / "d.csv", delimiter=",", skiprows=1)
    assert data.shape == (WP.n_cells, 2)
    np.testing.assert_allclose(data[:, 1], depth, rtol=1e-8)
