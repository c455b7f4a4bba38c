"""Lattice geometry: validation, kinematics chains, frames, mass properties."""

import math

import numpy as np
import pytest

from lattice_flight.allocation import build_gamma
from lattice_flight.config import parse_structure_text
from lattice_flight.errors import (
    ConfigError,
    DegenerateFrame,
    DisconnectedGraph,
    NonPositiveDimension,
    RowSumViolation,
)
from lattice_flight.structure import (
    CopterSpec,
    Kinematics,
    PolygonSpec,
    RodSpec,
    StructureSpec,
    agent_beams,
    forward_kinematics,
    interconnection_from_mounts,
    mass_properties,
    plant_mass_properties,
    resolve_structure_frame,
    validate_spec,
)

from conftest import QUAD_R, QUAD_TEXT, T_COPTER_TEXT, build

G = 9.81


# ---------------------------------------------------------------- oracles

def hrot_z(a):
    c, s = math.cos(a), math.sin(a)
    m = np.eye(4)
    m[0, 0], m[0, 1], m[1, 0], m[1, 1] = c, -s, s, c
    return m


def htrans(x, y=0.0, z=0.0):
    m = np.eye(4)
    m[:3, 3] = [x, y, z]
    return m


def point_inertia(m, r):
    r = np.asarray(r, dtype=float)
    return m * (float(r @ r) * np.eye(3) - np.outer(r, r))


def t_copter_points(segments_per_rod=1):
    """Hand-built point cloud of the bare T lattice (arms on +x, +y, -x).

    Returns (masses, positions, copter_indices) in hub coordinates; rods
    optionally split into segments for the discretization oracle."""
    masses, positions, copter_idx = [0.007], [np.array([0.0, 0.0, 0.0])], []
    for ang in (0.0, math.pi / 2, math.pi):
        u = np.array([math.cos(ang), math.sin(ang), 0.0])
        copter_idx.append(len(masses))
        masses.append(0.037)
        positions.append(0.17 * u)
        for k in range(segments_per_rod):
            frac = (k + 0.5) / segments_per_rod
            masses.append(0.0035 / segments_per_rod)
            positions.append((0.03 + 0.14 * frac) * u)
    return np.array(masses), np.array(positions), copter_idx


# ---------------------------------------------------------- validate_spec

def test_smallest_legal_lattice():
    spec = parse_structure_text(
        """
        [polygon] faces=4 mass=0.007 circumradius=0.03
        [rod] length=0.14 mass=0.0035 diameter=0.005 youngs_modulus=2.3e9
        [copter] mass=0.037 rod=0 polygon=0 slot=0
        """,
        "<test>",
    )
    assert validate_spec(spec) is spec
    assert spec.n == 1 and spec.p == 1


def test_hexacopter_interconnection_matrix(suite_paths):
    from lattice_flight.config import parse_structure_file

    spec = parse_structure_file(suite_paths["hexacopter"].with_suffix(".structure"))
    want = np.array(
        [[1, 1, 0, 0, 1, 1, 0, 1], [0, 0, 1, 1, 0, 0, 1, 0]], dtype=float
    )
    assert spec.interconnection.shape == (2, 8)
    assert np.array_equal(spec.interconnection, want)
    assert np.array_equal(
        interconnection_from_mounts(spec.copters, spec.polygons), want
    )
    validate_spec(spec)


def test_zero_interconnection_row_rejected():
    spec, _ = build(QUAD_TEXT)
    bad = StructureSpec(
        copters=spec.copters,
        polygons=spec.polygons,
        rods=spec.rods,
        interconnection=np.zeros_like(spec.interconnection),
        payload=spec.payload,
    )
    with pytest.raises(RowSumViolation):
        validate_spec(bad)


def test_copter_column_must_have_single_mount():
    spec, _ = build(QUAD_TEXT)
    doubled = spec.interconnection.copy()
    doubled[0, 0] = 2.0
    bad = StructureSpec(spec.copters, spec.polygons, spec.rods, doubled, spec.payload)
    with pytest.raises(RowSumViolation):
        validate_spec(bad)


def test_two_root_polygons_rejected():
    with pytest.raises(DisconnectedGraph):
        validate_spec(
            parse_structure_text(
                """
                [polygon] faces=4 mass=0.007 circumradius=0.03
                [polygon] faces=4 mass=0.007 circumradius=0.03
                [rod] length=0.14 mass=0.0035 diameter=0.005 youngs_modulus=2.3e9
                [copter] mass=0.037 rod=0 polygon=0 slot=0
                """,
                "<test>",
            )
        )


def test_nonpositive_dimension_rejected():
    with pytest.raises(NonPositiveDimension):
        validate_spec(
            parse_structure_text(
                """
                [polygon] faces=4 mass=0.007 circumradius=0.03
                [rod] length=0.14 mass=-0.0035 diameter=0.005 youngs_modulus=2.3e9
                [copter] mass=0.037 rod=0 polygon=0 slot=0
                """,
                "<test>",
            )
        )


def test_rod_claimed_twice_rejected():
    with pytest.raises((ConfigError, RowSumViolation)):
        validate_spec(
            parse_structure_text(
                """
                [polygon] faces=4 mass=0.007 circumradius=0.03
                [rod] length=0.14 mass=0.0035 diameter=0.005 youngs_modulus=2.3e9
                [copter] mass=0.037 rod=0 polygon=0 slot=0
                [copter] mass=0.037 rod=0 polygon=0 slot=1
                """,
                "<test>",
            )
        )


def test_slot_claimed_twice_rejected():
    with pytest.raises((ConfigError, RowSumViolation)):
        validate_spec(
            parse_structure_text(
                """
                [polygon] faces=4 mass=0.007 circumradius=0.03
                [rod] length=0.14 mass=0.0035 diameter=0.005 youngs_modulus=2.3e9
                [rod] length=0.14 mass=0.0035 diameter=0.005 youngs_modulus=2.3e9
                [copter] mass=0.037 rod=0 polygon=0 slot=0
                [copter] mass=0.037 rod=1 polygon=0 slot=0
                """,
                "<test>",
            )
        )


def test_slot_out_of_range_rejected():
    with pytest.raises((ConfigError, RowSumViolation)):
        validate_spec(
            parse_structure_text(
                """
                [polygon] faces=4 mass=0.007 circumradius=0.03
                [rod] length=0.14 mass=0.0035 diameter=0.005 youngs_modulus=2.3e9
                [copter] mass=0.037 rod=0 polygon=0 slot=4
                """,
                "<test>",
            )
        )


# ------------------------------------------------------ forward_kinematics

def test_single_arm_is_pure_translation():
    spec = validate_spec(
        parse_structure_text(
            """
            [polygon] faces=4 mass=0.007 circumradius=0.03
            [rod] length=0.14 mass=0.0035 diameter=0.005 youngs_modulus=2.3e9
            [copter] mass=0.037 rod=0 polygon=0 slot=0
            """,
            "<test>",
        )
    )
    kin = forward_kinematics(spec)
    want = htrans(0.03 + 0.14)
    assert np.allclose(kin.copters[0], want, atol=1e-15)


def test_two_polygon_chain_hand_multiplied(suite_paths):
    # hexacopter: square hub hangs off hexagon slot 2 through rod 4, and its
    # copters 2/3 sit on square slots 1/2 -- multiply the chains by hand
    from lattice_flight.config import parse_structure_file

    spec = parse_structure_file(suite_paths["hexacopter"].with_suffix(".structure"))
    kin = forward_kinematics(spec)

    poly1 = (
        hrot_z(2.0 * math.pi * 2 / 6)
        @ htrans(0.04 + 0.14 + 0.03)
        @ hrot_z(math.pi)
    )
    assert np.allclose(kin.polygons[1], poly1, atol=1e-12)
    c2 = poly1 @ hrot_z(2.0 * math.pi * 1 / 4) @ htrans(0.03 + 0.14)
    c3 = poly1 @ hrot_z(2.0 * math.pi * 2 / 4) @ htrans(0.03 + 0.14)
    assert np.allclose(kin.copters[2], c2, atol=1e-12)
    assert np.allclose(kin.copters[3], c3, atol=1e-12)


def test_top_mount_is_pure_z_translation(suite_paths):
    from lattice_flight.config import parse_structure_file

    spec = parse_structure_file(suite_paths["flexible_t"].with_suffix(".structure"))
    kin = forward_kinematics(spec)
    assert np.allclose(kin.copters[3], htrans(0.0, 0.0, 0.06), atol=1e-15)
    # a top-mounted copter has no rod: zero interconnection column, no beam
    assert np.all(spec.interconnection[:, 3] == 0)
    assert agent_beams(spec)[3] is None


# -------------------------------------------------- resolve_structure_frame

def test_quad_frame_symmetric(quad):
    spec, geometry, _ = quad
    assert np.allclose(geometry.com, 0.0, atol=1e-15)
    assert geometry.xs_agent == 0
    want = np.array(
        [[QUAD_R, 0, 0], [0, QUAD_R, 0], [-QUAD_R, 0, 0], [0, -QUAD_R, 0]]
    )
    assert np.allclose(geometry.displacements, want, atol=1e-12)
    assert np.allclose(
        np.degrees(geometry.alphas) % 360.0, [0, 90, 180, 270], atol=1e-9
    )


def test_transforms_are_pure_z_rotations(t_copter):
    _, geometry, _ = t_copter
    for i, tm in enumerate(geometry.transforms):
        rot = tm[:3, :3]
        assert np.allclose(rot @ rot.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(rot) == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(rot[2, :2], 0.0) and np.allclose(rot[:2, 2], 0.0)
        a = geometry.alphas[i]
        assert rot[0, 0] == pytest.approx(math.cos(a), abs=1e-12)
        assert rot[1, 0] == pytest.approx(math.sin(a), abs=1e-12)


def test_xs_agent_has_y_zero_x_positive(t_copter):
    _, geometry, _ = t_copter
    d = geometry.displacements[geometry.xs_agent]
    assert d[1] == pytest.approx(0.0, abs=1e-12)
    assert d[0] > 0
    planar = np.hypot(geometry.displacements[:, 0], geometry.displacements[:, 1])
    assert d[0] == pytest.approx(planar.max(), rel=1e-12)


def test_t_copter_frame_against_hand_centroid(t_copter):
    _, geometry, _ = t_copter
    masses, positions, copter_idx = t_copter_points()
    com = (masses[:, None] * positions).sum(axis=0) / masses.sum()
    assert np.allclose(geometry.com, com, atol=1e-12)

    # ties between the +x and -x copters break to the lower index (copter 0)
    d0 = positions[copter_idx[0]] - com
    assert geometry.xs_agent == 0
    assert geometry.frame_yaw == pytest.approx(math.atan2(d0[1], d0[0]), abs=1e-12)
    # and every displacement is the hub-frame offset rotated by -frame_yaw
    rot = hrot_z(-geometry.frame_yaw)[:3, :3]
    for i, j in enumerate(copter_idx):
        assert np.allclose(
            geometry.displacements[i], rot @ (positions[j] - com), atol=1e-12
        )


def test_frame_resolution_idempotent(quad):
    spec, geometry, _ = quad
    again = resolve_structure_frame(spec)
    assert np.array_equal(again.alphas, geometry.alphas)
    assert np.array_equal(again.displacements, geometry.displacements)


def test_relabeling_preserves_shape():
    rotated = QUAD_TEXT.replace(
        "[copter] mass=0.037 rod=0 polygon=0 slot=0\n", ""
    ) + "[copter] mass=0.037 rod=0 polygon=0 slot=0\n"
    _, g1 = build(QUAD_TEXT)
    _, g2 = build(rotated)
    d1 = np.sort(np.hypot(g1.displacements[:, 0], g1.displacements[:, 1]))
    d2 = np.sort(np.hypot(g2.displacements[:, 0], g2.displacements[:, 1]))
    assert np.allclose(d1, d2, atol=1e-12)
    a1 = np.sort(np.degrees(g1.alphas) % 360.0)
    a2 = np.sort(np.degrees(g2.alphas) % 360.0)
    assert np.allclose(a1, a2, atol=1e-9)


def test_degenerate_frame_detected(quad):
    spec, _, _ = quad
    stacked = Kinematics(
        copters=np.stack([np.eye(4)] * spec.n),
        polygons=np.stack([np.eye(4)] * spec.p),
    )
    with pytest.raises(DegenerateFrame):
        resolve_structure_frame(spec, kinematics=stacked)


# ------------------------------------------------------------ mass properties

def test_no_payload_no_static_torque(quad):
    _, _, props = quad
    assert np.array_equal(props.static_torque, np.zeros(3))


def test_point_mass_quad_inertia():
    # copters dominate: shrink hub and rods to crumbs, then check the
    # textbook point-mass values 4mr^2 / 2mr^2
    text = QUAD_TEXT.replace("mass=0.007", "mass=1e-9").replace(
        "mass=0.0035", "mass=1e-9"
    )
    spec, geometry = build(text)
    props = mass_properties(spec, geometry)
    r = QUAD_R
    assert props.inertia[2, 2] == pytest.approx(4 * 0.037 * r * r, rel=1e-6)
    assert props.inertia[0, 0] == pytest.approx(2 * 0.037 * r * r, rel=1e-6)
    assert props.inertia[1, 1] == pytest.approx(2 * 0.037 * r * r, rel=1e-6)


def test_inertia_against_discretization_oracle(t_copter):
    # rods as 100 point segments vs the analytic slender-bar terms
    _, geometry, props = t_copter
    masses, positions, _ = t_copter_points(segments_per_rod=100)
    com = (masses[:, None] * positions).sum(axis=0) / masses.sum()
    rot = hrot_z(-geometry.frame_yaw)[:3, :3]
    oracle = np.zeros((3, 3))
    for m, pos in zip(masses, positions):
        oracle += point_inertia(m, rot @ (pos - com))
    assert props.total_mass == pytest.approx(masses.sum(), rel=1e-12)
    assert np.allclose(props.inertia, oracle, rtol=1e-3)
    # J symmetric positive definite
    assert np.allclose(props.inertia, props.inertia.T, atol=1e-18)
    assert np.all(np.linalg.eigvalsh(props.inertia) > 0)


def test_unknown_payload_static_torque_cross_product(suite_paths):
    from lattice_flight.config import parse_structure_file

    spec = parse_structure_file(suite_paths["t_copter"].with_suffix(".structure"))
    geometry = resolve_structure_frame(spec)
    props = mass_properties(spec, geometry)
    want = np.cross(
        geometry.payload_offset, np.array([0.0, 0.0, -spec.payload.mass * G])
    )
    assert np.allclose(props.static_torque, want, atol=1e-15)
    assert np.linalg.norm(props.static_torque) > 0


def test_unknown_payload_excluded_from_controller_view(suite_paths):
    from lattice_flight.config import parse_structure_file

    spec = parse_structure_file(suite_paths["t_copter"].with_suffix(".structure"))
    geometry = resolve_structure_frame(spec)
    ctrl = mass_properties(spec, geometry)
    plant = plant_mass_properties(spec, geometry)
    assert plant.total_mass == pytest.approx(ctrl.total_mass + spec.payload.mass)
    # the unknown mass never shifts the frame: same com as the bare lattice
    masses, positions, _ = t_copter_points()
    com = (masses[:, None] * positions).sum(axis=0) / masses.sum()
    assert np.allclose(geometry.com, com, atol=1e-12)


def test_known_payload_shifts_frame(suite_paths):
    from lattice_flight.config import parse_structure_file

    spec = parse_structure_file(suite_paths["flexible_t"].with_suffix(".structure"))
    geometry = resolve_structure_frame(spec)
    props = mass_properties(spec, geometry)
    total = 0.007 + 2 * 0.0035 + 0.0075 + 4 * 0.037 + 0.05
    assert props.total_mass == pytest.approx(total, rel=1e-12)
    assert np.array_equal(props.static_torque, np.zeros(3))
    # the payload offset is measured from the hardware centroid, so the
    # composite com moves by m_p/total times the offset
    hw_mass = total - 0.05
    hw_com_z = 0.037 * 0.06 / hw_mass
    com_z = hw_com_z + 0.05 * -0.02 / total
    assert geometry.com[2] == pytest.approx(com_z, abs=1e-12)


def test_gamma_columns_match_cross_product_oracle(suite_paths):
    from lattice_flight.config import parse_structure_file

    spec = parse_structure_file(suite_paths["hexacopter"].with_suffix(".structure"))
    geometry = resolve_structure_frame(spec)
    gamma = build_gamma(geometry)
    for i, d in enumerate(geometry.displacements):
        arm = np.cross([d[0], d[1], 0.0], [0.0, 0.0, 1.0])
        assert gamma[0, i] == pytest.approx(arm[0], abs=1e-15)
        assert gamma[1, i] == pytest.approx(arm[1], abs=1e-15)
        assert gamma[2, i] == 1.0


def test_agent_beams_mirror_rods(t_copter):
    spec, _, _ = t_copter
    beams = agent_beams(spec)
    assert len(beams) == spec.n
    for c, b in zip(spec.copters, beams):
        rod = spec.rods[c.rod]
        assert b.length == rod.length
        assert b.youngs_modulus == rod.youngs_modulus
        assert b.tip_mass == c.mass
        assert b.section_inertia == pytest.approx(
            math.pi * rod.diameter**4 / 64.0, rel=1e-12
        )


def test_rod_linear_density():
    rod = RodSpec(length=0.14, mass=0.0035, diameter=0.005, youngs_modulus=2.3e9)
    assert rod.linear_density == pytest.approx(0.025, rel=1e-12)
