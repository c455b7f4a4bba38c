"""Battery voltage curve, depletion law, cutoff events."""

import numpy as np
import pytest

from lattice_flight.power import (
    DEFAULT_K_IDLE,
    DEFAULT_K_LOAD,
    DELTA_PRESETS,
    HARD_FLOOR,
    BatteryParams,
    BatteryState,
    VoltageCurve,
    battery_step,
    calibrate_depletion,
)


def default_params(delta=2.6):
    return BatteryParams(
        curve=VoltageCurve(),
        delta_volt=delta,
        k_idle=DEFAULT_K_IDLE,
        k_load=DEFAULT_K_LOAD,
    )


def integrate_endurance(thrust, delta, dt=0.25):
    params = default_params(delta)
    state = BatteryState.fresh(1, params.curve)
    t = 0.0
    while state.voltage[0] > delta:
        state, _ = battery_step(state, np.array([thrust]), dt, params)
        t += dt
        assert t < 1000.0
    return t


# ---------------------------------------------------------------- curve


def test_curve_starts_full_and_decreases_to_floor():
    curve = VoltageCurve()
    assert curve(0.0) == pytest.approx(4.0, abs=1e-12)
    xs = np.linspace(0.0, 1.0, 400)
    vs = np.array([curve(x) for x in xs])
    assert np.all(np.diff(vs) <= 1e-12)
    assert vs[-1] == HARD_FLOOR
    # clamped flat past full depletion
    assert curve(2.0) == HARD_FLOOR


def test_curve_capacity_at_round_trip():
    curve = VoltageCurve()
    for v in (3.9, 3.6, 3.3, 3.0, 2.7):
        x = curve.capacity_at(v)
        assert 0.0 <= x <= 1.0
        assert curve(x) == pytest.approx(v, abs=1e-6)


def test_curve_capacity_at_rejects_floor():
    curve = VoltageCurve()
    with pytest.raises(ValueError):
        curve.capacity_at(HARD_FLOOR)
    with pytest.raises(ValueError):
        curve.capacity_at(2.0)


def test_delta_presets():
    assert DELTA_PRESETS["no_payload"] == 2.6
    assert DELTA_PRESETS["payload_80"] == 2.75
    assert DELTA_PRESETS["payload_90"] == 2.9


# ---------------------------------------------------------------- depletion


def test_idle_rate_exact_at_zero_thrust():
    params = default_params()
    state = BatteryState.fresh(3, params.curve)
    state, _ = battery_step(state, np.zeros(3), 2.0, params)
    assert np.allclose(state.capacity_used, 2.0 * DEFAULT_K_IDLE, atol=1e-15)


def test_depletion_rate_is_quadratic_in_thrust():
    params = default_params()
    state = BatteryState.fresh(2, params.curve)
    state, _ = battery_step(state, np.array([0.2, 0.4]), 1.0, params)
    used_low, used_high = state.capacity_used
    assert used_low == pytest.approx(DEFAULT_K_IDLE + DEFAULT_K_LOAD * 0.04, abs=1e-15)
    assert used_high == pytest.approx(DEFAULT_K_IDLE + DEFAULT_K_LOAD * 0.16, abs=1e-15)


def test_heavier_load_depletes_strictly_earlier():
    light = integrate_endurance(0.25, 2.6)
    heavy = integrate_endurance(0.50, 2.6)
    assert heavy < light


def test_calibration_reproduces_endurance_targets():
    # the default constants are calibrated to 430 s at the unloaded hover
    # thrust and 270 s at the 80%-payload thrust; integrating the step
    # model must land on both (within one dt of overshoot)
    assert integrate_endurance(0.363, 2.6) == pytest.approx(430.0, abs=1.0)
    assert integrate_endurance(0.466, 2.75) == pytest.approx(270.0, abs=1.0)


def test_calibrate_returns_positive_rates_matching_defaults():
    k_idle, k_load = calibrate_depletion()
    assert k_idle > 0.0 and k_load > 0.0
    assert k_idle == pytest.approx(DEFAULT_K_IDLE, rel=1e-9)
    assert k_load == pytest.approx(DEFAULT_K_LOAD, rel=1e-9)


def test_calibrate_solves_the_two_point_system():
    # independently check the defining property: total capacity consumed
    # over each target duration equals the capacity at the cutoff voltage
    curve = VoltageCurve()
    k_idle, k_load = calibrate_depletion(curve=curve)
    used_unloaded = 430.0 * (k_idle + k_load * 0.363**2)
    used_loaded = 270.0 * (k_idle + k_load * 0.466**2)
    assert used_unloaded == pytest.approx(curve.capacity_at(2.6), rel=1e-6)
    assert used_loaded == pytest.approx(curve.capacity_at(2.75), rel=1e-6)


# ---------------------------------------------------------------- stepping


def test_battery_step_rejects_bad_dt():
    params = default_params()
    state = BatteryState.fresh(1, params.curve)
    with pytest.raises(ValueError):
        battery_step(state, np.zeros(1), 0.0, params)
    with pytest.raises(ValueError):
        battery_step(state, np.zeros(1), -0.1, params)


def test_battery_state_constructors():
    curve = VoltageCurve()
    fresh = BatteryState.fresh(3, curve)
    assert np.allclose(fresh.voltage, 4.0, atol=1e-12)
    assert np.allclose(fresh.capacity_used, 0.0)
    mixed = BatteryState.at_voltages(np.array([4.0, 3.85]), curve)
    assert np.allclose(mixed.voltage, [4.0, 3.85], atol=1e-6)
    assert mixed.capacity_used[1] > mixed.capacity_used[0]


def test_cutoff_event_fires_once_per_agent():
    params = default_params(delta=2.6)
    state = BatteryState.at_voltages(np.array([2.605, 3.5]), params.curve)
    seen = []
    for _ in range(5):
        state, events = battery_step(state, np.array([0.5, 0.5]), 2.0, params)
        seen.extend(events)
    assert seen == [0]
    assert state.voltage[0] <= 2.6


def test_voltage_never_rises_while_stepping():
    params = default_params()
    state = BatteryState.fresh(2, params.curve)
    prev = state.voltage.copy()
    for _ in range(200):
        state, _ = battery_step(state, np.array([0.4, 0.1]), 1.0, params)
        assert np.all(state.voltage <= prev + 1e-12)
        prev = state.voltage.copy()
    # the harder-working agent sits lower
    assert state.voltage[0] < state.voltage[1]
