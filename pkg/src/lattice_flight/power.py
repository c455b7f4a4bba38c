"""Per-agent battery depletion model.

Voltage is a fixed analytic curve of normalized capacity used: a fast
exponential drop off the full charge, a long linear plateau, and a logistic
knee collapsing toward the cutoff region.  Load enters only through how fast
capacity is consumed: dc/dt = k_idle + k_load * T^2.  The default rate
constants are calibrated so a single stock quadrotor agent hovers ~430 s
before hitting the 2.6 V cutoff unloaded, and ~270 s to 2.75 V when carrying
80% of its rated payload.
"""

from dataclasses import dataclass, field, replace

import numpy as np

# cutoff presets by payload fraction of the rated maximum
DELTA_PRESETS = {"no_payload": 2.6, "payload_80": 2.75, "payload_90": 2.9}

HARD_FLOOR = 2.5


@dataclass(frozen=True)
class VoltageCurve:
    """Piecewise-smooth voltage vs capacity-used; monotone decreasing."""

    # The initial sag must stay shallow: a deep sag makes fresh cells converge
    # onto partially-drained ones within a minute, flattening the voltage
    # spread the battery-weighted allocator feeds on.
    b_full: float = 4.0
    drop: float = 0.015  # depth of the initial exponential sag
    drop_scale: float = 0.015
    slope: float = 1.35  # plateau V per unit capacity
    knee_depth: float = 0.6
    knee_center: float = 0.93
    knee_width: float = 0.025
    floor: float = HARD_FLOOR

    def __call__(self, capacity_used):
        c = np.asarray(capacity_used, dtype=float)
        v = (
            self.b_full
            - self.drop * (1.0 - np.exp(-c / self.drop_scale))
            - self.slope * c
            - self.knee_depth / (1.0 + np.exp(-(c - self.knee_center) / self.knee_width))
        )
        return np.maximum(v, self.floor)

    def capacity_at(self, voltage: float) -> float:
        """Inverse of the curve (bisection); 0 at/above full charge."""
        if voltage >= self.b_full:
            return 0.0
        if voltage <= self.floor:
            raise ValueError(f"voltage {voltage} is at or below the {self.floor} V floor")
        lo, hi = 0.0, 1.0
        while self._raw(hi) > voltage:
            hi *= 2.0
            if hi > 1e6:
                raise ValueError(f"voltage {voltage} not reachable on this curve")
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if self._raw(mid) > voltage:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def _raw(self, c: float) -> float:
        # curve without the floor clamp, for inversion
        return (
            self.b_full
            - self.drop * (1.0 - np.exp(-c / self.drop_scale))
            - self.slope * c
            - self.knee_depth / (1.0 + np.exp(-(c - self.knee_center) / self.knee_width))
        )


def calibrate_depletion(
    curve: VoltageCurve | None = None,
    t_unloaded: float = 430.0,
    t_loaded: float = 270.0,
    thrust_unloaded: float = 0.363,
    thrust_loaded: float = 0.466,
    delta_unloaded: float = DELTA_PRESETS["no_payload"],
    delta_loaded: float = DELTA_PRESETS["payload_80"],
) -> tuple[float, float]:
    """Solve (k_idle, k_load) from two (steady thrust, endurance, cutoff)
    pairs: capacity-to-cutoff / endurance = k_idle + k_load * T^2."""
    curve = curve or VoltageCurve()
    rate_u = curve.capacity_at(delta_unloaded) / t_unloaded
    rate_l = curve.capacity_at(delta_loaded) / t_loaded
    k_load = (rate_l - rate_u) / (thrust_loaded**2 - thrust_unloaded**2)
    k_idle = rate_u - k_load * thrust_unloaded**2
    if k_idle <= 0.0 or k_load <= 0.0:
        raise ValueError(
            f"calibration produced non-physical rates (k_idle={k_idle}, "
            f"k_load={k_load}); check the endurance targets"
        )
    return k_idle, k_load


DEFAULT_K_IDLE, DEFAULT_K_LOAD = calibrate_depletion()


@dataclass
class BatteryParams:
    curve: VoltageCurve = field(default_factory=VoltageCurve)
    delta_volt: float = DELTA_PRESETS["no_payload"]
    k_idle: float = DEFAULT_K_IDLE
    k_load: float = DEFAULT_K_LOAD


@dataclass
class BatteryState:
    voltage: np.ndarray
    capacity_used: np.ndarray

    @classmethod
    def fresh(cls, n: int, curve: VoltageCurve | None = None) -> "BatteryState":
        curve = curve or VoltageCurve()
        return cls(voltage=np.full(n, curve.b_full), capacity_used=np.zeros(n))

    @classmethod
    def at_voltages(cls, voltages, curve: VoltageCurve | None = None) -> "BatteryState":
        curve = curve or VoltageCurve()
        v = np.asarray(voltages, dtype=float)
        c = np.array([curve.capacity_at(vi) for vi in v])
        return cls(voltage=curve(c), capacity_used=c)


def battery_step(
    state: BatteryState, thrusts, dt: float, params: BatteryParams
) -> tuple[BatteryState, tuple[int, ...]]:
    """Advance every battery by dt under the given thrust loads.

    Returns the new state and the indices of agents whose voltage crossed
    delta_volt during this step (the depletion events).
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    t = np.asarray(thrusts, dtype=float)
    c = state.capacity_used + dt * (params.k_idle + params.k_load * t * t)
    v = params.curve(c)
    crossed = np.flatnonzero((state.voltage > params.delta_volt) & (v <= params.delta_volt))
    new = replace(state, voltage=v, capacity_used=c)
    return new, tuple(int(i) for i in crossed)
