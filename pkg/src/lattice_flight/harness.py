"""Scenario runner: close the loop between plant, controller, and batteries.

Timing contract: the plant integrates at 1 ms, the attitude/allocation loop
runs every 5 ms, and the position loop (waypoints, collective thrust, mass
adaptation) every 20 ms.  One telemetry record is appended per 5 ms control
tick.  Runs are deterministic for a given scenario + seed: the seed drives
only the measurement noise.

Scenario files use the same `[section] key=value` syntax as structure files;
see parse_scenario_text for the accepted sections.
"""

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

from importlib import resources

import numpy as np

from . import config as _config
from .allocation import Metric, MetricParams, build_gamma
from .control import (
    AdaptiveState,
    AttitudeGains,
    FlightController,
    Measurement,
    PositionGains,
    altitude_lyapunov,
    attitude_lyapunov,
)
from .config import parse_structure_file
from .dynamics import FlightState, PlantParams, step
from .errors import ConfigError, NonFiniteState, SimDiverged
from .flexibility import GRAVITY
from .power import BatteryParams, BatteryState, VoltageCurve, battery_step
from .structure import (
    agent_beams,
    mass_properties,
    plant_mass_properties,
    resolve_structure_frame,
    validate_spec,
)

PLANT_DT = 0.001
INNER_DT = 0.005
OUTER_DT = 0.020

CSV_VERSION = "#lattice-flight v1"


@dataclass
class Waypoint:
    x: float
    y: float
    z: float
    t: float  # activation time: the step target switches here

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass
class NoiseParams:
    sigma_att: float = math.radians(0.5)  # rad, applied to angles and rates
    sigma_pos: float = 0.002  # m, applied to position and velocity


@dataclass
class BatteryConfig:
    enabled: bool = True
    params: BatteryParams = field(default_factory=BatteryParams)
    initial: np.ndarray | None = None  # per-agent volts; None = full charge


@dataclass
class Scenario:
    name: str
    structure_path: Path
    waypoints: list[Waypoint]
    duration: float
    metric: Metric = Metric.FT
    seed: int = 0
    start: np.ndarray = field(default_factory=lambda: np.zeros(3))
    noise: NoiseParams = field(default_factory=NoiseParams)
    position_gains: PositionGains = field(default_factory=PositionGains)
    attitude_gains: AttitudeGains = field(default_factory=AttitudeGains)
    metric_params: MetricParams = field(default_factory=MetricParams)
    battery: BatteryConfig = field(default_factory=BatteryConfig)
    t_max: float = 0.58
    m_max: float = 0.005
    flex_filter_tau: float = 0.0
    compensate_flex: bool = True
    g: float = GRAVITY
    degraded_threshold: float = 0.05

    def __post_init__(self):
        if not self.waypoints:
            raise ValueError("scenario needs at least one waypoint")
        times = [w.t for w in self.waypoints]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("waypoints must be time-ordered")
        if self.duration < times[-1]:
            raise ValueError(
                f"duration {self.duration} s ends before the last waypoint "
                f"at {times[-1]} s"
            )


def _gains_from_section(sec) -> tuple[PositionGains, AttitudeGains]:
    pos_kw = {}
    for key in ("k_z1", "k_z2", "k_x1", "k_x2", "k_y1", "k_y2", "sigma_m", "angle_max"):
        if sec.has(key):
            pos_kw[key] = sec.get_float(key)
    att_kw = {}
    for key in ("k_phi", "k_omega", "lam", "sigma_tau"):
        if sec.has(key):
            att_kw[key] = sec.get_float(key)
    return PositionGains(**pos_kw), AttitudeGains(**att_kw)


def parse_scenario_text(text: str, path: str = "<scenario>") -> Scenario:
    """Sections: [scenario] (structure, duration, metric, seed, start, name,
    degraded_threshold), repeated [waypoint] (x, y, z, t), [noise]
    (sigma_att_deg, sigma_pos), [gains], [limits] (t_max, m_max), [plant]
    (flex_filter_tau, compensate_flex, g), [battery] (enabled, delta, b_full,
    initial, k_idle, k_load), [metric_params] (epsilon, alpha_min, alpha_max,
    tau_x_max, tau_y_max, delta_volt)."""
    head = None
    waypoints = []
    noise = NoiseParams()
    pos_gains, att_gains = PositionGains(), AttitudeGains()
    battery = BatteryConfig()
    metric_kw = {}
    limits = {}
    plant_kw = {}

    for sec in _config.iter_sections(text, path):
        if sec.name == "scenario":
            if head is not None:
                raise ConfigError("duplicate [scenario] section", path, sec.line)
            head = sec
            head.reject_unknown(
                {
                    "structure",
                    "duration",
                    "metric",
                    "seed",
                    "start",
                    "name",
                    "degraded_threshold",
                }
            )
        elif sec.name == "waypoint":
            sec.reject_unknown({"x", "y", "z", "t"})
            waypoints.append(
                Waypoint(
                    x=sec.get_float("x", required=True),
                    y=sec.get_float("y", required=True),
                    z=sec.get_float("z", required=True),
                    t=sec.get_float("t", required=True),
                )
            )
        elif sec.name == "noise":
            noise = NoiseParams(
                sigma_att=math.radians(sec.get_float("sigma_att_deg", 0.5)),
                sigma_pos=sec.get_float("sigma_pos", 0.002),
            )
            sec.reject_unknown({"sigma_att_deg", "sigma_pos"})
        elif sec.name == "gains":
            pos_gains, att_gains = _gains_from_section(sec)
        elif sec.name == "limits":
            if sec.has("t_max"):
                limits["t_max"] = sec.get_float("t_max")
            if sec.has("m_max"):
                limits["m_max"] = sec.get_float("m_max")
            sec.reject_unknown({"t_max", "m_max"})
        elif sec.name == "plant":
            if sec.has("flex_filter_tau"):
                plant_kw["flex_filter_tau"] = sec.get_float("flex_filter_tau")
            if sec.has("compensate_flex"):
                plant_kw["compensate_flex"] = sec.get_bool("compensate_flex")
            if sec.has("g"):
                plant_kw["g"] = sec.get_float("g")
            sec.reject_unknown({"flex_filter_tau", "compensate_flex", "g"})
        elif sec.name == "battery":
            curve_kw = {}
            if sec.has("b_full"):
                curve_kw["b_full"] = sec.get_float("b_full")
            params = BatteryParams(curve=VoltageCurve(**curve_kw))
            if sec.has("delta"):
                params.delta_volt = sec.get_float("delta")
            if sec.has("k_idle"):
                params.k_idle = sec.get_float("k_idle")
            if sec.has("k_load"):
                params.k_load = sec.get_float("k_load")
            initial = sec.get_floats("initial") if sec.has("initial") else None
            battery = BatteryConfig(
                enabled=sec.get_bool("enabled", True),
                params=params,
                initial=None if initial is None else np.asarray(initial),
            )
            sec.reject_unknown(
                {"enabled", "delta", "b_full", "initial", "k_idle", "k_load"}
            )
        elif sec.name == "metric_params":
            for key in (
                "epsilon",
                "alpha_min",
                "alpha_max",
                "tau_x_max",
                "tau_y_max",
                "delta_volt",
            ):
                if sec.has(key):
                    metric_kw[key] = sec.get_float(key)
            sec.reject_unknown(
                {"epsilon", "alpha_min", "alpha_max", "tau_x_max", "tau_y_max", "delta_volt"}
            )
        else:
            raise ConfigError(f"unknown section [{sec.name}]", path, sec.line)

    if head is None:
        raise ConfigError("missing [scenario] section", path, 1)
    structure, _ = head.get_raw("structure", required=True)
    base = Path(path).parent if path not in ("<scenario>", "<stdin>") else Path(".")
    structure_path = (base / structure).resolve()

    if "delta_volt" not in metric_kw:
        metric_kw["delta_volt"] = battery.params.delta_volt
    start = (
        head.get_floats("start", count=3) if head.has("start") else [0.0, 0.0, 0.0]
    )
    metric = Metric.FT
    if head.has("metric"):
        raw, line = head.get_raw("metric")
        try:
            metric = Metric(raw)
        except ValueError:
            raise ConfigError(
                f"unknown metric '{raw}' (choose from "
                f"{[m.value for m in Metric]})",
                path,
                line,
            ) from None
    name, _ = head.get_raw("name", default=None)
    if name is None:
        name = Path(path).stem.replace(".scenario", "")

    return Scenario(
        name=name,
        structure_path=structure_path,
        waypoints=waypoints,
        duration=head.get_float("duration", required=True),
        metric=metric,
        seed=head.get_int("seed", 0),
        start=np.asarray(start, dtype=float),
        noise=noise,
        position_gains=pos_gains,
        attitude_gains=att_gains,
        metric_params=MetricParams(**metric_kw),
        battery=battery,
        t_max=limits.get("t_max", 0.58),
        m_max=limits.get("m_max", 0.005),
        degraded_threshold=(
            head.get_float("degraded_threshold") if head.has("degraded_threshold") else 0.05
        ),
        **plant_kw,
    )


def parse_scenario_file(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file: {exc}", str(path), 0) from None
    return parse_scenario_text(text, str(path))


@dataclass
class TelemetryRecord:
    time: float
    position: np.ndarray
    attitude: np.ndarray
    thrusts: np.ndarray
    moments: np.ndarray
    gamma: np.ndarray
    delta_z: np.ndarray
    battery: np.ndarray
    m_hat: float
    j_diag: np.ndarray
    tau_s_hat: np.ndarray
    v_z: float
    v_att: float
    status: str

    @staticmethod
    def header(n: int) -> list[str]:
        cols = ["time", "x", "y", "z", "phi", "theta", "psi"]
        for stem in ("T", "M", "gamma", "delta", "B"):
            cols += [f"{stem}{i}" for i in range(n)]
        cols += ["m_hat", "J_xx", "J_yy", "J_zz", "tau_s_x", "tau_s_y", "tau_s_z"]
        cols += ["V_z", "V_att", "status"]
        return cols

    def row(self) -> list[str]:
        vals = [self.time, *self.position, *self.attitude]
        vals += [*self.thrusts, *self.moments, *self.gamma, *self.delta_z, *self.battery]
        vals += [self.m_hat, *self.j_diag, *self.tau_s_hat, self.v_z, self.v_att]
        return [repr(float(v)) for v in vals] + [self.status]


@dataclass
class RunResult:
    scenario: Scenario
    metric: Metric
    seed: int
    records: list[TelemetryRecord]
    summary: dict
    depleted: list[tuple[float, int]]
    csv_path: Path | None = None

    @property
    def degraded_fraction(self) -> float:
        return self.summary["degraded_fraction"]


def _active_waypoint(waypoints: list[Waypoint], t: float) -> Waypoint:
    active = waypoints[0]
    for w in waypoints:
        if w.t <= t + 1e-12:
            active = w
        else:
            break
    return active


def build_plant(spec, geometry, scenario: Scenario) -> PlantParams:
    props = plant_mass_properties(spec, geometry, g=scenario.g)
    beams = agent_beams(spec)
    payload_mass = 0.0
    payload_offset = np.zeros(3)
    if not spec.payload.known and spec.payload.mass > 0:
        payload_mass = spec.payload.mass
        payload_offset = geometry.payload_offset
    return PlantParams(
        geometry=geometry,
        mass=props.total_mass,
        inertia=props.inertia,
        beams=beams,
        payload_mass=payload_mass,
        payload_offset=payload_offset,
        flex_filter_tau=scenario.flex_filter_tau,
        g=scenario.g,
    )


def run_scenario(
    scenario: Scenario,
    out_dir=None,
    metric: Metric | None = None,
    seed: int | None = None,
) -> RunResult:
    """Simulate one scenario; optionally override metric/seed and write CSV."""
    metric = Metric(metric) if metric is not None else scenario.metric
    seed = scenario.seed if seed is None else int(seed)

    spec = parse_structure_file(scenario.structure_path)
    validate_spec(spec)
    geometry = resolve_structure_frame(spec)
    ctrl_props = mass_properties(spec, geometry, g=scenario.g)
    plant = build_plant(spec, geometry, scenario)
    n = spec.n

    adaptive = AdaptiveState.initial(ctrl_props)

    controller = FlightController(
        geometry=geometry,
        gamma_matrix=build_gamma(geometry),
        beams=plant.beams,
        adaptive=adaptive,
        position_gains=scenario.position_gains,
        attitude_gains=scenario.attitude_gains,
        metric=metric,
        metric_params=scenario.metric_params,
        t_max=scenario.t_max,
        m_max=scenario.m_max,
        compensate_flex=scenario.compensate_flex,
        g=scenario.g,
    )

    state = FlightState.at_rest(n)
    state.position = scenario.start.copy()

    batt_state = None
    if scenario.battery.enabled:
        curve = scenario.battery.params.curve
        if scenario.battery.initial is not None:
            init = np.asarray(scenario.battery.initial, dtype=float)
            if init.size == 1:
                init = np.full(n, float(init))
            if init.size != n:
                raise ValueError(f"need 1 or {n} initial battery voltages")
            batt_state = BatteryState.at_voltages(init, curve)
        else:
            batt_state = BatteryState.fresh(n, curve)
        controller.set_batteries(batt_state.voltage)

    rng = np.random.default_rng(seed)
    tau_s_true = plant.gravity_torque(np.eye(3))
    j_true = plant.inertia

    records: list[TelemetryRecord] = []
    depleted: list[tuple[float, int]] = []
    degraded = 0
    solve_times: list[float] = []
    n_ticks = int(round(scenario.duration / INNER_DT))
    plant_substeps = int(round(INNER_DT / PLANT_DT))

    for tick in range(n_ticks):
        t = tick * INNER_DT
        noise = rng.standard_normal(12)
        meas = Measurement(
            position=state.position + scenario.noise.sigma_pos * noise[0:3],
            velocity=state.velocity + scenario.noise.sigma_pos * noise[3:6],
            attitude=state.attitude + scenario.noise.sigma_att * noise[6:9],
            omega=state.omega + scenario.noise.sigma_att * noise[9:12],
        )

        if tick % int(round(OUTER_DT / INNER_DT)) == 0:
            controller.set_target(_active_waypoint(scenario.waypoints, t).position)
            controller.outer_tick(meas, OUTER_DT)

        t0 = time.perf_counter()
        out = controller.inner_tick(meas, INNER_DT)
        solve_times.append(time.perf_counter() - t0)
        if out.status != "optimal":
            degraded += 1

        try:
            for _ in range(plant_substeps):
                state = step(state, out.command, PLANT_DT, plant)
        except NonFiniteState as exc:
            raise SimDiverged(str(exc), tick=tick) from None
        if not np.all(np.isfinite(state.position)) or np.any(
            np.abs(state.position) > 1e3
        ):
            raise SimDiverged(
                f"position diverged at t={t:.3f} s: {state.position}", tick=tick
            )

        if batt_state is not None:
            batt_state, events = battery_step(
                batt_state, out.command.thrust, INNER_DT, scenario.battery.params
            )
            depleted += [(t, i) for i in events]
            controller.set_batteries(batt_state.voltage)
            battery_now = batt_state.voltage
        else:
            battery_now = np.full(n, scenario.battery.params.curve.b_full)

        err = controller.errors
        v_z = altitude_lyapunov(err.e_z, err.s_z)
        v_att = attitude_lyapunov(
            err.e_phi, err.z_phi, j_true, tau_s_true, controller.adaptive,
            controller.attitude_gains,
        )
        records.append(
            TelemetryRecord(
                time=t,
                position=state.position.copy(),
                attitude=state.attitude.copy(),
                thrusts=out.command.thrust.copy(),
                moments=out.command.moment.copy(),
                gamma=state.flex.gamma.copy(),
                delta_z=state.flex.delta_z.copy(),
                battery=battery_now.copy(),
                m_hat=controller.adaptive.m_hat,
                j_diag=np.diag(controller.adaptive.j_hat).copy(),
                tau_s_hat=controller.adaptive.tau_s_hat.copy(),
                v_z=v_z,
                v_att=v_att,
                status=out.status,
            )
        )

    summary = _summarize(scenario, records, degraded, n_ticks, solve_times)
    result = RunResult(
        scenario=scenario,
        metric=metric,
        seed=seed,
        records=records,
        summary=summary,
        depleted=depleted,
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result.csv_path = out_dir / f"{scenario.name}_{metric.value}_seed{seed}.csv"
        write_telemetry(result.csv_path, result)
    return result


def _settle_time(times, errors, activation: float, end: float, band: float):
    """Earliest time after activation from which the error stays inside the
    band until the segment end; None if it never settles."""
    inside_from = None
    for t, e in zip(times, errors):
        if t < activation - 1e-12 or t > end + 1e-12:
            continue
        if abs(e) < band:
            if inside_from is None:
                inside_from = t
        else:
            inside_from = None
    if inside_from is None:
        return None
    return inside_from - activation


def _summarize(scenario, records, degraded, n_ticks, solve_times) -> dict:
    times = np.array([r.time for r in records])
    pos = np.array([r.position for r in records])
    thrusts = np.array([r.thrusts for r in records])
    batt = np.array([r.battery for r in records])

    targets = np.array(
        [_active_waypoint(scenario.waypoints, t).position for t in times]
    )
    e = pos - targets
    settle = {}
    for k, w in enumerate(scenario.waypoints):
        end = (
            scenario.waypoints[k + 1].t
            if k + 1 < len(scenario.waypoints)
            else scenario.duration
        )
        seg = (times >= w.t - 1e-12) & (times <= end + 1e-12)
        ez_seg = pos[seg, 2] - w.z
        settle[k] = _settle_time(times[seg], ez_seg, w.t, end, band=0.01)

    return {
        "max_abs_e_z": float(np.abs(e[:, 2]).max(initial=0.0)),
        "final_e_z": float(e[-1, 2]) if len(e) else float("nan"),
        "rms_pos_error": float(np.sqrt(np.mean(np.sum(e**2, axis=1)))) if len(e) else 0.0,
        "settle_z": settle,
        "mean_thrust": thrusts.mean(axis=0).tolist() if len(thrusts) else [],
        "max_thrust": thrusts.max(axis=0).tolist() if len(thrusts) else [],
        "max_thrust_overall": float(thrusts.max(initial=0.0)),
        "min_battery": float(batt.min(initial=np.inf)),
        "degraded_fraction": degraded / max(n_ticks, 1),
        "saturated_ticks": int(
            np.sum(np.any(thrusts >= scenario.t_max - 1e-9, axis=1))
        ),
        "median_solve_ms": float(np.median(solve_times) * 1e3) if solve_times else 0.0,
        "duration": scenario.duration,
    }


def write_telemetry(path, result: RunResult) -> None:
    n = result.records[0].thrusts.size if result.records else 0
    lines = [CSV_VERSION]
    lines.append(
        f"#meta name={result.scenario.name} metric={result.metric.value} "
        f"seed={result.seed} n={n}"
    )
    lines.append(",".join(TelemetryRecord.header(n)))
    for rec in result.records:
        lines.append(",".join(rec.row()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class ComparisonReport:
    runs: dict
    table: dict

    def format_table(self) -> str:
        cols = [
            "metric",
            "max_thrust",
            "mean_thrust",
            "rms_pos_error",
            "saturated_ticks",
            "degraded_fraction",
        ]
        lines = [" ".join(f"{c:>18}" for c in cols)]
        for m, row in self.table.items():
            cells = [m] + [f"{row[c]:.6g}" for c in cols[1:]]
            lines.append(" ".join(f"{c:>18}" for c in cells))
        return "\n".join(lines)


def compare_metrics(scenario: Scenario, metrics, out_dir=None) -> ComparisonReport:
    """Run the same scenario+seed once per metric and tabulate the outcomes."""
    runs = {}
    table = {}
    for m in metrics:
        m = Metric(m)
        res = run_scenario(scenario, out_dir=out_dir, metric=m)
        runs[m.value] = res
        thrusts = np.array([r.thrusts for r in res.records])
        table[m.value] = {
            "max_thrust": float(thrusts.max(initial=0.0)),
            "mean_thrust": float(thrusts.mean()) if thrusts.size else 0.0,
            "rms_pos_error": res.summary["rms_pos_error"],
            "saturated_ticks": res.summary["saturated_ticks"],
            "degraded_fraction": res.summary["degraded_fraction"],
        }
    report = ComparisonReport(runs=runs, table=table)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        cols = ["max_thrust", "mean_thrust", "rms_pos_error", "saturated_ticks", "degraded_fraction"]
        lines = [",".join(["metric"] + cols)]
        for m, row in table.items():
            lines.append(",".join([m] + [repr(row[c]) for c in cols]))
        (out_dir / "comparison.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return report


def scenario_suite() -> dict[str, Path]:
    """Bundled scenario files keyed by name."""
    root = resources.files("lattice_flight") / "scenarios"
    out = {}
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".scenario"):
            out[entry.name.removesuffix(".scenario")] = Path(str(entry))
    return out
