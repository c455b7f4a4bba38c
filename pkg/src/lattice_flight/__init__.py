"""Modular multi-copter lattices: geometry, flexible dynamics, adaptive
control, and constrained thrust allocation."""

from .allocation import (
    AllocationProblem,
    AllocationResult,
    Metric,
    MetricParams,
    allocate,
    build_gamma,
    saturation,
    solve_fb,
    solve_fe,
    solve_ft,
    solve_pseudo_inverse,
    total_yaw_and_distribute,
)
from .config import parse_structure_file, parse_structure_text
from .control import (
    AdaptiveState,
    AgentSetpoint,
    AttitudeGains,
    FlightController,
    Measurement,
    PositionGains,
    agent_setpoints,
    altitude_control,
    attitude_control,
    lateral_control,
    mass_adaptation_step,
    xi_terms,
)
from .dynamics import (
    FlightState,
    LinearizedModel,
    PlantParams,
    ThrustVector,
    linearize,
    step,
)
from .errors import (
    BatteryBelowCutoff,
    ConfigError,
    DisconnectedGraph,
    Infeasible,
    LatticeError,
    NonPositiveDimension,
    RankDeficient,
    RowSumViolation,
    SimDiverged,
)
from .flexibility import (
    BeamParams,
    FlexState,
    beam_shape,
    section_inertia_circular,
    static_deflection,
)
from .harness import (
    Scenario,
    compare_metrics,
    parse_scenario_file,
    run_scenario,
    scenario_suite,
)
from .power import BatteryParams, BatteryState, VoltageCurve, battery_step
from .structure import (
    CopterSpec,
    PolygonSpec,
    RodSpec,
    StructureSpec,
    forward_kinematics,
    interconnection_from_mounts,
    mass_properties,
    resolve_structure_frame,
    validate_spec,
)

__version__ = "0.1.0"
