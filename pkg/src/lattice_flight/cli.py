"""Batch command-line interface.

Subcommands: simulate, compare, inspect, allocate.  Exit codes: 0 success,
1 usage/config error, 2 simulation divergence, 3 the degraded-allocation
fraction exceeded the scenario threshold.
"""

import argparse
import sys

import numpy as np

from . import config as _config
from .allocation import AllocationProblem, Metric, MetricParams, allocate, build_gamma
from .config import parse_structure_file
from .errors import ConfigError, LatticeError, SimDiverged
from .harness import (
    compare_metrics,
    parse_scenario_file,
    run_scenario,
    scenario_suite,
)
from .structure import mass_properties, resolve_structure_frame, validate_spec

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DIVERGED = 2
EXIT_DEGRADED = 3


def _resolve_scenario(name_or_path: str):
    from pathlib import Path

    p = Path(name_or_path)
    if p.exists():
        return parse_scenario_file(p)
    suite = scenario_suite()
    if name_or_path in suite:
        return parse_scenario_file(suite[name_or_path])
    raise ConfigError(
        f"scenario '{name_or_path}' is neither a file nor one of the bundled "
        f"scenarios {sorted(suite)}",
        name_or_path,
        0,
    )


def _cmd_simulate(args) -> int:
    scenario = _resolve_scenario(args.scenario)
    try:
        result = run_scenario(
            scenario, out_dir=args.out, metric=args.metric, seed=args.seed
        )
    except SimDiverged as exc:
        print(f"DIVERGED: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    s = result.summary
    print(f"scenario {scenario.name}  metric={result.metric.value}  seed={result.seed}")
    print(f"  max |e_z| = {s['max_abs_e_z']:.4f} m   final e_z = {s['final_e_z']:.4f} m")
    print(f"  rms position error = {s['rms_pos_error']:.4f} m")
    for k, st in s["settle_z"].items():
        txt = "never" if st is None else f"{st:.2f} s"
        print(f"  waypoint {k}: settle(|e_z|<1cm) = {txt}")
    print(
        f"  thrust mean/max = {np.mean(s['mean_thrust']):.3f} / "
        f"{s['max_thrust_overall']:.3f} N   min battery = {s['min_battery']:.3f} V"
    )
    print(
        f"  degraded ticks = {s['degraded_fraction'] * 100:.2f}%   "
        f"median solve = {s['median_solve_ms']:.2f} ms"
    )
    if result.csv_path is not None:
        print(f"  telemetry: {result.csv_path}")
    if s["degraded_fraction"] > scenario.degraded_threshold:
        print(
            f"degraded fraction {s['degraded_fraction']:.3f} exceeds threshold "
            f"{scenario.degraded_threshold}",
            file=sys.stderr,
        )
        return EXIT_DEGRADED
    return EXIT_OK


def _cmd_compare(args) -> int:
    scenario = _resolve_scenario(args.scenario)
    metrics = [Metric(m.strip()) for m in args.metrics.split(",") if m.strip()]
    try:
        report = compare_metrics(scenario, metrics, out_dir=args.out)
    except SimDiverged as exc:
        print(f"DIVERGED: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    print(report.format_table())
    worst = max(r["degraded_fraction"] for r in report.table.values())
    if worst > scenario.degraded_threshold:
        return EXIT_DEGRADED
    return EXIT_OK


def _cmd_inspect(args) -> int:
    spec = parse_structure_file(args.structure)
    validate_spec(spec)
    geometry = resolve_structure_frame(spec)
    props = mass_properties(spec, geometry)
    print(f"agents: {spec.n}   polygons: {spec.p}")
    print(f"total mass (controller view): {props.total_mass:.6f} kg")
    print(f"mass center (root frame): {np.array2string(geometry.com, precision=6)}")
    print(f"structure x-axis through agent {geometry.xs_agent} "
          f"(frame yaw {np.degrees(geometry.frame_yaw):.2f} deg)")
    print("per-agent displacement from C_s [m] and heading alpha [deg]:")
    for i, (d, a) in enumerate(zip(geometry.displacements, geometry.alphas)):
        print(
            f"  agent {i}: x={d[0]: .4f} y={d[1]: .4f} z={d[2]: .4f} "
            f"alpha={np.degrees(a):8.2f}"
        )
    print("allocation matrix Gamma (rows: tau_x arms, tau_y arms, ones):")
    for row in build_gamma(geometry):
        print("  " + " ".join(f"{v: .5f}" for v in row))
    print("inertia about C_s [kg m^2]:")
    for row in props.inertia:
        print("  " + " ".join(f"{v: .3e}" for v in row))
    if spec.payload.mass > 0:
        kind = "known" if spec.payload.known else "unknown"
        print(
            f"payload: {spec.payload.mass:.4f} kg ({kind}) at offset "
            f"{np.array2string(geometry.payload_offset, precision=4)}"
        )
        print(f"hover static torque: {np.array2string(props.static_torque, precision=6)}")
    return EXIT_OK


def _parse_allocation_problem(text: str) -> AllocationProblem:
    head = None
    gamma_rows = []
    params_kw = {}
    batteries = None
    for sec in _config.iter_sections(text, "<stdin>"):
        if sec.name == "problem":
            head = sec
        elif sec.name == "gamma":
            gamma_rows.append(sec.get_floats("row", required=True))
        elif sec.name == "params":
            for key in (
                "epsilon",
                "alpha_min",
                "alpha_max",
                "tau_x_max",
                "tau_y_max",
                "delta_volt",
            ):
                if sec.has(key):
                    params_kw[key] = sec.get_float(key)
            if sec.has("batteries"):
                batteries = sec.get_floats("batteries")
        else:
            raise ConfigError(f"unknown section [{sec.name}]", "<stdin>", sec.line)
    if head is None:
        raise ConfigError("missing [problem] section", "<stdin>", 1)
    if len(gamma_rows) != 3:
        raise ConfigError(
            f"expected exactly 3 [gamma] rows, got {len(gamma_rows)}", "<stdin>", 1
        )
    rhs = head.get_floats("rhs", count=3, required=True)
    params = MetricParams(**params_kw)
    if batteries is not None:
        params.batteries = np.asarray(batteries, dtype=float)
    metric = Metric.FT
    if head.has("metric"):
        raw, _ = head.get_raw("metric")
        metric = Metric(raw)
    return AllocationProblem(
        gamma=np.asarray(gamma_rows, dtype=float),
        rhs=np.asarray(rhs, dtype=float),
        t_max=head.get_float("t_max", required=True),
        metric=metric,
        params=params,
    )


def _cmd_allocate(args) -> int:
    problem = _parse_allocation_problem(sys.stdin.read())
    result = allocate(problem)
    print("agent,thrust,moment")
    # cast before repr: numpy scalar reprs are not parseable csv cells
    for i, t in enumerate(result.thrusts):
        print(f"{i},{float(t)!r},{float(result.moments[i])!r}")
    print(
        f"# status={result.status} objective={float(result.objective)!r} "
        f"residual={float(result.residual)!r}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lattice-flight",
        description="Modular multi-copter lattice: simulate, compare, inspect, allocate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run one scenario and write telemetry")
    p_sim.add_argument(
        "--scenario", required=True, help="scenario file path or bundled scenario name"
    )
    p_sim.add_argument("--metric", choices=[m.value for m in Metric], default=None)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--out", default=None, help="directory for telemetry CSV")
    p_sim.set_defaults(func=_cmd_simulate)

    p_cmp = sub.add_parser("compare", help="run a scenario once per metric")
    p_cmp.add_argument("--scenario", required=True)
    p_cmp.add_argument(
        "--metrics", required=True, help="comma-separated subset of pinv,ft,fe,fb"
    )
    p_cmp.add_argument("--out", default=None)
    p_cmp.set_defaults(func=_cmd_compare)

    p_ins = sub.add_parser("inspect", help="print geometry and mass properties")
    p_ins.add_argument("--structure", required=True)
    p_ins.set_defaults(func=_cmd_inspect)

    p_alloc = sub.add_parser(
        "allocate", help="solve one allocation problem read from stdin"
    )
    p_alloc.set_defaults(func=_cmd_allocate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, LatticeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
