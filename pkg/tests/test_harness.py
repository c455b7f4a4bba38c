"""Closed-loop scenario runs, telemetry format, CLI exit codes."""

import io
import math

import numpy as np
import pytest

from lattice_flight import cli
from lattice_flight.allocation import Metric
from lattice_flight.config import parse_structure_text
from lattice_flight.flexibility import static_deflection
from lattice_flight.harness import (
    CSV_VERSION,
    TelemetryRecord,
    _settle_time,
    compare_metrics,
    parse_scenario_file,
    run_scenario,
    scenario_suite,
    write_telemetry,
)
from lattice_flight.structure import agent_beams, validate_spec

from conftest import QUAD_TEXT

SHORT_SCENARIO = """
[scenario] name=short structure=quad.structure duration=2 metric=ft seed=7 start=0 0 1
[waypoint] x=0 y=0 z=1 t=0
"""


@pytest.fixture(scope="module")
def short_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("harness")
    (root / "quad.structure").write_text(QUAD_TEXT)
    (root / "short.scenario").write_text(SHORT_SCENARIO)
    return root


@pytest.fixture(scope="module")
def short_scenario(short_dir):
    return parse_scenario_file(short_dir / "short.scenario")


@pytest.fixture(scope="module")
def short_run(short_scenario):
    return run_scenario(short_scenario)


# ---------------------------------------------------------------- suite


def test_scenario_suite_bundles_six(suite_paths):
    assert set(suite_paths) == {
        "flexible_t",
        "hexacopter",
        "l_payload",
        "pentacopter",
        "quad",
        "t_copter",
    }
    for name, path in suite_paths.items():
        assert path.exists()
        assert path.suffix == ".scenario"
        assert path.with_suffix(".structure").exists()
        sc = parse_scenario_file(path)
        assert sc.name == name
        assert sc.duration > 0
        assert sc.waypoints


# ---------------------------------------------------------------- running


def test_short_hover_run_is_sane(short_run):
    s = short_run.summary
    assert s["duration"] == pytest.approx(2.0, abs=1e-9)
    assert s["max_abs_e_z"] < 0.05
    assert s["rms_pos_error"] < 0.05
    assert s["degraded_fraction"] == 0.0
    assert len(s["mean_thrust"]) == 4
    assert s["max_thrust_overall"] <= 0.58 + 1e-9
    assert s["median_solve_ms"] > 0.0
    assert len(short_run.records) == 400  # 2 s at the 5 ms inner rate


def test_same_seed_reproduces_telemetry_bytes(short_scenario, tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    write_telemetry(a, run_scenario(short_scenario))
    write_telemetry(b, run_scenario(short_scenario))
    assert a.read_bytes() == b.read_bytes()
    assert a.stat().st_size > 10_000


def test_different_seed_changes_trajectory(short_scenario):
    base = run_scenario(short_scenario)
    other = run_scenario(short_scenario, seed=8)
    za = [r.position[2] for r in base.records]
    zb = [r.position[2] for r in other.records]
    assert not np.allclose(za, zb)


def test_metric_override(short_scenario):
    res = run_scenario(short_scenario, metric=Metric.PSEUDO_INVERSE)
    assert res.metric is Metric.PSEUDO_INVERSE


def test_telemetry_file_layout(short_scenario, tmp_path):
    res = run_scenario(short_scenario)
    path = tmp_path / "t.csv"
    write_telemetry(path, res)
    lines = path.read_text().splitlines()
    assert lines[0] == CSV_VERSION
    assert lines[1] == "#meta name=short metric=ft seed=7 n=4"
    header = TelemetryRecord.header(4)
    assert lines[2] == ",".join(header)
    assert len(lines) == 3 + len(res.records)
    first = lines[3].split(",")
    assert len(first) == len(header)
    # every cell except the trailing status is numeric
    for cell in first[:-1]:
        float(cell)
    assert first[-1] in ("optimal", "degraded")


def test_rigid_quad_barely_bends(short_run):
    # stiff 14 cm arms: deflections stay millimetric, angles < 0.03 rad
    gам = np.array([r.gamma for r in short_run.records])
    dz = np.array([r.delta_z for r in short_run.records])
    assert np.max(np.abs(gам)) < 0.03
    assert np.max(np.abs(dz)) < 0.004


def test_zero_filter_time_gamma_is_static_snap(short_dir, suite_paths):
    # with no flex filter the plant bending must equal the static model
    # of the commanded thrusts at every tick
    structure_text = suite_paths["flexible_t"].with_suffix(".structure").read_text()
    (short_dir / "flex.structure").write_text(structure_text)
    (short_dir / "flex.scenario").write_text(
        """
[scenario] name=flex structure=flex.structure duration=1.5 metric=ft seed=5 start=0 0 0.8
[waypoint] x=0 y=0 z=0.8 t=0
[plant] flex_filter_tau=0.0
"""
    )
    sc = parse_scenario_file(short_dir / "flex.scenario")
    res = run_scenario(sc)
    beams = agent_beams(validate_spec(parse_structure_text(structure_text, "<t>")))
    for rec in res.records[::10]:
        for i, beam in enumerate(beams):
            if beam is None:
                assert rec.gamma[i] == 0.0
            else:
                want = static_deflection(rec.thrusts[i], beam, sc.g)[1]
                assert rec.gamma[i] == pytest.approx(want, abs=1e-12)


def test_compare_metrics_table(short_scenario, tmp_path):
    report = compare_metrics(short_scenario, [Metric.FT, Metric.PSEUDO_INVERSE], out_dir=tmp_path)
    assert set(report.runs) == {"ft", "pinv"}
    assert set(report.table) == {"ft", "pinv"}
    for row in report.table.values():
        assert np.isfinite(row["max_thrust"])
        assert np.isfinite(row["mean_thrust"])
        assert np.isfinite(row["rms_pos_error"])
        assert row["degraded_fraction"] == 0.0
    assert (tmp_path / "comparison.csv").exists()


# ---------------------------------------------------------------- settle time


def test_settle_time_immediate():
    times = np.arange(0.0, 10.0, 0.5)
    errors = np.full_like(times, 0.005)
    assert _settle_time(times, errors, 2.0, 10.0, 0.01) == 0.0


def test_settle_time_after_transient():
    times = np.arange(0.0, 10.0, 0.5)
    errors = np.where(times < 5.0, 1.0, 0.0)
    assert _settle_time(times, errors, 2.0, 10.0, 0.01) == pytest.approx(3.0)


def test_settle_time_resets_on_excursion():
    times = np.arange(0.0, 10.5, 0.5)
    errors = np.zeros_like(times)
    errors[times == 8.0] = 0.02  # pops back out of the band
    assert _settle_time(times, errors, 0.0, 10.0, 0.01) == pytest.approx(8.5)


def test_settle_time_never():
    times = np.arange(0.0, 10.0, 0.5)
    errors = np.full_like(times, 0.05)
    assert _settle_time(times, errors, 0.0, 10.0, 0.01) is None


def test_settle_time_band_is_strict():
    times = np.array([0.0, 1.0])
    errors = np.array([0.01, 0.01])
    assert _settle_time(times, errors, 0.0, 1.0, 0.01) is None


# ---------------------------------------------------------------- cli


def test_cli_inspect(short_dir, capsys):
    code = cli.main(["inspect", "--structure", str(short_dir / "quad.structure")])
    assert code == 0
    out = capsys.readouterr().out
    assert "agents: 4" in out
    assert "Gamma" in out


def test_cli_simulate_writes_csv(short_dir, tmp_path, capsys):
    code = cli.main(
        ["simulate", "--scenario", str(short_dir / "short.scenario"), "--out", str(tmp_path)]
    )
    assert code == 0
    out_csv = tmp_path / "short_ft_seed7.csv"
    assert out_csv.exists()
    assert "telemetry" in capsys.readouterr().out


def test_cli_simulate_metric_and_seed_flags(short_dir, tmp_path):
    code = cli.main(
        [
            "simulate",
            "--scenario",
            str(short_dir / "short.scenario"),
            "--metric",
            "pinv",
            "--seed",
            "11",
            "--out",
            str(tmp_path),
        ]
    )
    assert code == 0
    assert (tmp_path / "short_pinv_seed11.csv").exists()


def test_cli_unknown_scenario_errors(capsys):
    assert cli.main(["simulate", "--scenario", "no_such_thing"]) == 1
    assert capsys.readouterr().err != ""


def test_cli_bad_scenario_file_errors(tmp_path, capsys):
    bad = tmp_path / "bad.scenario"
    bad.write_text("[scenario] name=x structure=missing.structure duration=1 seed=0\n")
    assert cli.main(["simulate", "--scenario", str(bad)]) == 1


def test_cli_divergence_exit_code(short_dir, tmp_path):
    (short_dir / "div.scenario").write_text(
        """
[scenario] name=div structure=quad.structure duration=2 metric=ft seed=3 start=0 0 999.8
[waypoint] x=0 y=0 z=1005 t=0
"""
    )
    code = cli.main(
        ["simulate", "--scenario", str(short_dir / "div.scenario"), "--out", str(tmp_path)]
    )
    assert code == 2


def test_cli_degraded_exit_code(short_dir, tmp_path):
    # a quad four times too heavy saturates the allocator nearly every tick
    (short_dir / "heavy.structure").write_text(QUAD_TEXT.replace("mass=0.037", "mass=0.5"))
    (short_dir / "deg.scenario").write_text(
        """
[scenario] name=deg structure=heavy.structure duration=2 metric=ft seed=3 start=0 0 1
[waypoint] x=0 y=0 z=1 t=0
"""
    )
    code = cli.main(
        ["simulate", "--scenario", str(short_dir / "deg.scenario"), "--out", str(tmp_path)]
    )
    assert code == 3


def test_cli_compare(short_dir, tmp_path, capsys):
    code = cli.main(
        [
            "compare",
            "--scenario",
            str(short_dir / "short.scenario"),
            "--metrics",
            "ft,pinv",
            "--out",
            str(tmp_path),
        ]
    )
    assert code == 0
    assert (tmp_path / "comparison.csv").exists()
    out = capsys.readouterr().out
    assert "ft" in out and "pinv" in out


def test_cli_allocate_stdin(monkeypatch, capsys):
    text = """
[problem] rhs=0 0 0.3 t_max=0.58 metric=ft
[gamma] row=0 0.17 0 -0.17
[gamma] row=-0.17 0 0.17 0
[gamma] row=1 1 1 1
"""
    monkeypatch.setattr("sys.stdin", io.StringIO(text))
    assert cli.main(["allocate"]) == 0
    out = capsys.readouterr().out
    assert "agent,thrust,moment" in out
    assert "status=optimal" in out
    thrusts = [float(line.split(",")[1]) for line in out.splitlines()[1:5]]
    assert thrusts == pytest.approx([0.075] * 4, abs=1e-9)


def test_cli_allocate_rejects_malformed_input(monkeypatch, capsys):
    monkeypatch.setattr("sys.stdin", io.StringIO("[problem] rhs=0 0 1 t_max=0.5\n"))
    assert cli.main(["allocate"]) == 1
    assert "gamma" in capsys.readouterr().err
